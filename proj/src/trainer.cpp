#include "gslu/trainer.hpp"

#include "gslu/metrics.hpp"
#include "gslu/util.hpp"

#include <filesystem>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

namespace gslu {

namespace {

std::string utterance_key(const Utterance& u) {
  return join(u.tokens, "\x1f") + "\x1e" + join(u.intents, "\x1f") + "\x1e" +
         join(u.bio_tags, "\x1f");
}

std::vector<TargetSequence> gold_targets(const std::vector<Utterance>& corpus) {
  std::vector<TargetSequence> gold;
  gold.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    try {
      gold.push_back(TargetSequence{corpus[i].intents, spans_from_bio(corpus[i].bio_tags)});
    } catch (const GrammarError& e) {
      throw TrainError("dev utterance " + std::to_string(i) + " has unusable gold labels: " +
                       e.what());
    }
  }
  return gold;
}

}  // namespace

TrainResult train(const std::vector<Utterance>& train_corpus,
                  const std::vector<Utterance>& dev_corpus, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const Tokenizer& tokenizer,
                  const LabelVocabulary& vocab, std::ostream* log) {
  cfg.validate();
  if (train_corpus.empty() || dev_corpus.empty())
    throw TrainError("train: both corpora must be non-empty");

  ModelConfig mcfg = model_cfg;
  if (mcfg.vocab_size == 0) mcfg.vocab_size = tokenizer.size();
  if (mcfg.n_intents == 0 && mcfg.n_slots == 0) {
    mcfg.n_intents = vocab.n_intents();
    mcfg.n_slots = vocab.n_slots();
  }
  if (mcfg.vocab_size != tokenizer.size() || mcfg.n_intents != vocab.n_intents() ||
      mcfg.n_slots != vocab.n_slots())
    throw TrainError("train: model configuration disagrees with the vocabularies");
  mcfg.validate();

  {
    // deliberate overlap (overfitting probes) is allowed but worth flagging
    std::set<std::string> seen;
    for (const auto& u : train_corpus) seen.insert(utterance_key(u));
    long shared = 0;
    for (const auto& u : dev_corpus) shared += seen.count(utterance_key(u)) ? 1 : 0;
    if (shared > 0)
      std::cerr << "train: warning: " << shared
                << " dev utterance(s) also appear in the training split\n";
  }

  const std::vector<Sample> samples = prepare_samples(train_corpus, vocab);
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (static_cast<int>(samples[i].input_ids.size()) > mcfg.max_len ||
        static_cast<int>(samples[i].target.size()) > mcfg.max_len)
      throw TrainError("training sample " + std::to_string(i) +
                       " does not fit max_len " + std::to_string(mcfg.max_len));
  const std::vector<TargetSequence> dev_gold = gold_targets(dev_corpus);
  GenerateOptions gen;
  gen.max_steps = std::max(default_max_steps(train_corpus), default_max_steps(dev_corpus));

  std::vector<std::string> category_names = vocab.intent_names();
  category_names.insert(category_names.end(), vocab.slot_names().begin(),
                        vocab.slot_names().end());

  if (log) *log << "epoch\tstep\tloss\tlr\n";

  TrainResult res;
  for (std::size_t li = 0; li < cfg.lr_grid.size(); ++li) {
    const double lr = cfg.lr_grid[li];
    ModelParams<float> params = ModelParams<float>::init(mcfg, cfg.seed);
    *params.val.at("cat_emb") = init_category_embeddings<float>(
        category_names, *params.val.at("tok_emb"), tokenizer, cfg.seed + 1);

    AdamW<float> opt(lr, cfg.weight_decay);
    std::mt19937_64 shuffle_rng = split_rng(cfg.seed, li);
    std::mt19937_64 dropout_rng = split_rng(cfg.seed, 1u << 16 | li);
    std::vector<std::size_t> idx(samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});

    double initial_loss = -1.0;
    int high_loss_evals = 0;
    bool aborted = false;
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs && !aborted; ++epoch) {
      std::shuffle(idx.begin(), idx.end(), shuffle_rng);
      double loss_sum = 0.0;
      long n_batches = 0;
      bool faulted = false;
      for (std::size_t b0 = 0; b0 < idx.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
        std::vector<Sample> batch;
        for (std::size_t i = b0; i < std::min(idx.size(), b0 + cfg.batch_size); ++i)
          batch.push_back(samples[idx[i]]);
        params.zero_grads();
        Tape<float> tape;
        double lval = 0.0;
        try {
          auto loss = teacher_forcing_loss(batch, params, &tape, dropout_rng, true);
          lval = static_cast<double>(loss.item());
          tape.backward(loss);
        } catch (const std::runtime_error& e) {
          // a numeric blow-up is divergence in its most extreme form: give up
          // on this grid point and let the remaining rates compete
          if (log)
            *log << "# diverged (numeric fault): lr " << lr << " abandoned at epoch " << epoch
                 << ", step " << (step + 1) << ": " << e.what() << "\n";
          faulted = true;
          break;
        }
        clip_gradients(params, cfg.grad_clip);
        opt.step(params);
        ++step;
        loss_sum += lval;
        ++n_batches;
        if (initial_loss < 0.0) initial_loss = lval;
        if (log) *log << epoch << "\t" << step << "\t" << lval << "\t" << lr << "\n";
      }

      EpochRecord rec;
      rec.learning_rate = lr;
      rec.epoch = epoch;
      rec.mean_loss = n_batches > 0 ? loss_sum / static_cast<double>(n_batches) : 0.0;
      if (faulted) {
        rec.diverged = true;
        res.history.push_back(rec);
        break;
      }

      if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
        if (rec.mean_loss > 10.0 * initial_loss) {
          if (++high_loss_evals >= 3) {
            rec.diverged = true;
            aborted = true;
            if (log)
              *log << "# diverged: lr " << lr << " abandoned at epoch " << epoch << "\n";
          }
        } else {
          high_loss_evals = 0;
        }
        if (!aborted) {
          double dev_overall = 0.0;
          try {
            auto preds = predict_batch(dev_corpus, params, vocab, gen, cfg.n_threads);
            std::vector<TargetSequence> hyp;
            hyp.reserve(preds.size());
            for (const auto& p : preds) hyp.push_back(p.target);
            dev_overall = evaluate(dev_gold, hyp).overall_accuracy;
          } catch (const std::runtime_error& e) {
            // a numerically broken model scores zero instead of killing the run
            if (log)
              *log << "# eval fault at lr " << lr << ", epoch " << epoch << ": " << e.what()
                   << "\n";
            dev_overall = 0.0;
          }
          rec.evaluated = true;
          rec.dev_overall = dev_overall;
          if (selection_improves(dev_overall, epoch, lr, res.best_dev, res.best_epoch,
                                 res.best_lr)) {
            res.best_dev = dev_overall;
            res.best_epoch = epoch;
            res.best_lr = lr;
            res.best = params.clone();
          }
          if (cfg.early_stop_dev >= 0.0 && dev_overall >= cfg.early_stop_dev) {
            res.history.push_back(rec);
            break;  // this grid point is done
          }
        }
      }
      res.history.push_back(rec);
    }
  }

  if (res.best_epoch < 0)
    throw TrainError("train: every grid point diverged before its first evaluation");

  if (!cfg.checkpoint_dir.empty()) {
    std::filesystem::create_directories(cfg.checkpoint_dir);
    CheckpointMeta meta;
    meta.epoch = res.best_epoch;
    meta.dev_metric = res.best_dev;
    meta.learning_rate = res.best_lr;
    meta.seed = cfg.seed;
    res.checkpoint_path =
        (std::filesystem::path(cfg.checkpoint_dir) / "best.gslu").string();
    save_checkpoint(res.checkpoint_path, res.best, meta, tokenizer, vocab);
  }
  return res;
}

}  // namespace gslu
