#pragma once

#include "gslu/checkpoint.hpp"
#include "gslu/decode.hpp"
#include "gslu/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gslu {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int batch_size = 16;
  int epochs = 30;
  std::vector<double> lr_grid = {1e-4, 3e-4, 1e-3};
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global-norm ceiling; 0 disables clipping
  std::uint64_t seed = 0;
  int eval_every = 1;   // dev evaluation cadence, in epochs
  int n_threads = 1;    // worker threads for dev decoding
  // Finish a grid point early once dev overall accuracy reaches this value;
  // negative disables the shortcut.
  double early_stop_dev = -1.0;
  std::string checkpoint_dir;  // empty: keep the best weights in memory only

  void validate() const {
    if (batch_size < 1) throw TrainError("train config: batch_size must be >= 1");
    if (epochs < 1) throw TrainError("train config: epochs must be >= 1");
    if (lr_grid.empty()) throw TrainError("train config: learning-rate grid is empty");
    for (double lr : lr_grid)
      if (!(lr > 0.0)) throw TrainError("train config: learning rates must be positive");
    if (weight_decay < 0.0) throw TrainError("train config: weight_decay must be >= 0");
    if (grad_clip < 0.0) throw TrainError("train config: grad_clip must be >= 0");
    if (eval_every < 1) throw TrainError("train config: eval_every must be >= 1");
    if (n_threads < 1) throw TrainError("train config: n_threads must be >= 1");
  }
};

// One teacher-forcing training example: model input ids (words + sentinel)
// and the gold label-id sequence including the terminator.
struct Sample {
  std::vector<int> input_ids;
  std::vector<int> target;
  int n_words = 0;
};

inline std::vector<Sample> prepare_samples(const std::vector<Utterance>& corpus,
                                           const LabelVocabulary& vocab) {
  std::vector<Sample> out;
  out.reserve(corpus.size());
  for (const auto& u : corpus) {
    Sample s;
    s.input_ids = model_input_ids(u);
    s.target = encode_target(u, vocab);
    s.n_words = static_cast<int>(u.tokens.size());
    out.push_back(std::move(s));
  }
  return out;
}

// Mean over the batch of each sample's mean-per-step cross entropy. Samples
// keep their own label-space width during the forward pass; shorter samples'
// logit rows are padded with masked columns up to the widest position block
// so every row scores the same label layout. Masked columns contribute no
// probability and no gradient, so padding is arithmetically invisible.
template <class T>
Tensor<T> teacher_forcing_loss(const std::vector<Sample>& batch, const ModelParams<T>& params,
                               Tape<T>* tape, std::mt19937_64& rng, bool training = true) {
  if (batch.empty()) throw TrainError("teacher_forcing_loss: empty batch");
  const ModelConfig& cfg = params.cfg;
  int n_max = 0;
  for (const auto& s : batch) n_max = std::max(n_max, s.n_words);
  Tensor<T> total;
  for (const auto& s : batch) {
    if (s.target.empty()) throw TrainError("teacher_forcing_loss: sample with empty target");
    LabelSpace space(s.n_words, cfg.n_intents, cfg.n_slots);
    auto enc = encode(s.input_ids, params, tape, rng, training);
    std::vector<int> prev(s.target.begin(), s.target.end() - 1);
    auto h = decode_full(prev, enc, params, space, tape, rng, training);
    auto logits = pointer_logits(h, enc, params, tape);
    const int pad = n_max - s.n_words;
    Tensor<T> sample_loss;
    if (pad == 0) {
      sample_loss = cross_entropy(logits, s.target);
    } else {
      auto positions = slice_cols(logits, 0, space.positions());
      auto categories =
          slice_cols(logits, space.positions(), space.size() - space.positions());
      auto filler = constant<T>(Mat<T>::Zero(logits.rows(), pad));
      auto padded = concat_cols(concat_cols(positions, filler), categories);
      BoolMat mask = BoolMat::Constant(logits.rows(), padded.cols(), true);
      mask.middleCols(space.positions(), pad) = false;
      std::vector<int> targets = s.target;
      for (int& id : targets)
        if (id >= space.positions()) id += pad;
      sample_loss = cross_entropy(padded, targets, &mask);
    }
    total = total.val ? add(total, sample_loss) : sample_loss;
  }
  auto loss = scale(total, T(1) / T(batch.size()));
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw TrainError("teacher_forcing_loss: non-finite batch loss");
  return loss;
}

// Decoupled-weight-decay Adam: the decay term multiplies the weights
// directly and never enters the moment estimates.
template <class T>
class AdamW {
 public:
  explicit AdamW(double lr, double weight_decay = 0.01, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

  void step(ModelParams<T>& params) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(beta1_, static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(beta2_, static_cast<double>(t_)));
    for (const auto& name : params.order) {
      Mat<T>& w = *params.val.at(name);
      const Mat<T>& g = *params.grad.at(name);
      Mat<T>& m = m_.try_emplace(name, Mat<T>::Zero(w.rows(), w.cols())).first->second;
      Mat<T>& v = v_.try_emplace(name, Mat<T>::Zero(w.rows(), w.cols())).first->second;
      m = T(beta1_) * m + (T(1) - T(beta1_)) * g;
      v.array() = T(beta2_) * v.array() + (T(1) - T(beta2_)) * g.array().square();
      w.array() -= T(lr_) * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + T(eps_)) +
                             T(wd_) * w.array());
    }
  }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::unordered_map<std::string, Mat<T>> m_, v_;
};

// Scales all gradients so their joint Frobenius norm is at most max_norm
// (0 disables). Returns the pre-clip norm.
template <class T>
double clip_gradients(ModelParams<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.order)
    sq += static_cast<double>(params.grad.at(name)->squaredNorm());
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (const auto& name : params.order) *params.grad.at(name) *= s;
  }
  return norm;
}

struct EpochRecord {
  double learning_rate = 0.0;
  int epoch = 0;
  double mean_loss = 0.0;
  bool evaluated = false;
  double dev_overall = 0.0;
  bool diverged = false;  // this epoch triggered the divergence abort
};

// Model-selection order: higher dev overall accuracy wins; ties go to the
// earlier epoch, then the smaller learning rate.
inline bool selection_improves(double acc, int epoch, double lr, double best_acc,
                               int best_epoch, double best_lr) {
  if (acc != best_acc) return acc > best_acc;
  if (epoch != best_epoch) return epoch < best_epoch;
  return lr < best_lr;
}

struct TrainResult {
  ModelParams<float> best;  // weights of the selected epoch
  double best_dev = -1.0;
  int best_epoch = -1;
  double best_lr = 0.0;
  std::vector<EpochRecord> history;
  std::string checkpoint_path;  // set when a checkpoint directory was given
};

// Grid-searched teacher-forcing training. Every grid point starts from the
// same seeded initialization; selection maximizes dev overall accuracy with
// ties broken toward the earlier epoch, then the smaller learning rate.
// The optional log receives one "epoch<TAB>step<TAB>loss<TAB>lr" row per
// optimizer step.
TrainResult train(const std::vector<Utterance>& train_corpus,
                  const std::vector<Utterance>& dev_corpus, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const Tokenizer& tokenizer,
                  const LabelVocabulary& vocab, std::ostream* log = nullptr);

}  // namespace gslu
