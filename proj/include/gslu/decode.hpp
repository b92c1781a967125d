#pragma once

#include "gslu/model.hpp"

#include <atomic>
#include <chrono>
#include <limits>
#include <mutex>
#include <thread>

namespace gslu {

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything one in-flight generation owns: the labels emitted so far, the
// grammar automaton, and the per-layer caches. The cross-attention-map cache
// holds exactly t rows after step t; decoder key/value caches likewise.
template <class T>
struct DecodeState {
  explicit DecodeState(const LabelSpace& space, int n_layers, int n_heads)
      : grammar(space),
        k_self(static_cast<std::size_t>(n_layers)),
        v_self(static_cast<std::size_t>(n_layers)),
        k_sam(static_cast<std::size_t>(n_layers)),
        cam_hist(static_cast<std::size_t>(n_layers),
                 std::vector<Mat<T>>(static_cast<std::size_t>(n_heads))) {}

  std::vector<int> emitted;
  GrammarState grammar;
  int t = 0;  // completed steps

  std::vector<Mat<T>> k_self, v_self;              // per layer, t x d
  std::vector<Mat<T>> k_sam;                       // per layer, t x d
  std::vector<std::vector<Mat<T>>> cam_hist;       // [layer][head], t x N
};

// Greedy generation result. `target` is always a valid parse; the flags say
// whether the raw label sequence was cut off at max_steps or (with the
// grammar constraint disabled) failed to parse at all.
struct Prediction {
  TargetSequence target;
  std::vector<int> labels;
  bool truncated = false;
  bool malformed = false;
};

namespace detail {

template <class T>
Mat<T> softmax_row(const Mat<T>& x) {
  Mat<T> y = x;
  T mx = x.maxCoeff();
  y.array() = (y.array() - mx).exp();
  y /= y.sum();
  return y;
}

template <class T>
Mat<T> ln_row(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, T eps = T(1e-5)) {
  T mean = x.mean();
  T var = (x.array() - mean).square().mean();
  Mat<T> xhat = (x.array() - mean) / std::sqrt(var + eps);
  return (xhat.array() * g.array() + b.array()).matrix();
}

template <class T>
Mat<T> gelu_mat(const Mat<T>& x) {
  return x.unaryExpr([](T v) {
    return T(0.5) * v * (T(1) + std::erf(v / std::sqrt(T(2))));
  });
}

template <class T>
Mat<T> affine_row(const Mat<T>& x, const ModelParams<T>& p, const std::string& w,
                  const std::string& b) {
  return (x * (*p.value(w))).rowwise() + p.value(b)->row(0);
}

}  // namespace detail

// One incremental decoder step on raw matrices: consumes the newest input
// embedding row (already position-encoded), appends to every cache, and
// returns the hidden state for this step. Independent of the full-sequence
// tape route, which doubles as its correctness oracle.
template <class T>
Mat<T> decode_hidden(DecodeState<T>& st, const Mat<T>& x_new, const EncoderOutput<T>& enc,
                     const ModelParams<T>& params) {
  const ModelConfig& cfg = params.cfg;
  const int dk = cfg.d_k();
  const T inv_sqrt_dk = T(1) / std::sqrt(T(dk));
  if (x_new.rows() != 1 || x_new.cols() != cfg.d)
    throw DecodeError("decode_hidden: expected a single 1 x d embedding row");
  const int t_prev = st.t;
  Mat<T> x = x_new;
  for (int i = 0; i < cfg.n_dec_layers; ++i) {
    const auto li = static_cast<std::size_t>(i);
    std::string base = "dec" + std::to_string(i);
    if (st.k_self[li].rows() != t_prev)
      throw DecodeError("decode_hidden: key cache desynchronized from step counter");

    // causal self-attention over the cached keys plus this step's own
    Mat<T> q = detail::affine_row(x, params, base + ".self.wq", base + ".self.bq");
    Mat<T> k = detail::affine_row(x, params, base + ".self.wk", base + ".self.bk");
    Mat<T> v = detail::affine_row(x, params, base + ".self.wv", base + ".self.bv");
    st.k_self[li].conservativeResize(t_prev + 1, cfg.d);
    st.v_self[li].conservativeResize(t_prev + 1, cfg.d);
    st.k_self[li].row(t_prev) = k;
    st.v_self[li].row(t_prev) = v;
    Mat<T> ctx(1, cfg.d);
    std::vector<Mat<T>> self_prob_rows(static_cast<std::size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto qh = q.middleCols(h * dk, dk);
      auto kh = st.k_self[li].middleCols(h * dk, dk);
      auto vh = st.v_self[li].middleCols(h * dk, dk);
      Mat<T> p = detail::softmax_row<T>(qh * kh.transpose() * inv_sqrt_dk);
      self_prob_rows[static_cast<std::size_t>(h)] = p;
      ctx.middleCols(h * dk, dk) = p * vh;
    }
    Mat<T> attn = (ctx * (*params.value(base + ".self.wo"))).rowwise() +
                  params.value(base + ".self.bo")->row(0);
    x = detail::ln_row<T>(cfg.residual_enabled ? Mat<T>(x + attn) : attn,
                          *params.value(base + ".ln1.g"), *params.value(base + ".ln1.b"));

    // attention-over-attention cross sublayer
    std::string cr = base + ".cross";
    Mat<T> cq = detail::affine_row(x, params, cr + ".wq", cr + ".bq");
    if (cfg.aoa_enabled && !cfg.aoa_sam_reuse_self) {
      Mat<T> ks = detail::affine_row(x, params, cr + ".wk_sam", cr + ".bk_sam");
      st.k_sam[li].conservativeResize(t_prev + 1, cfg.d);
      st.k_sam[li].row(t_prev) = ks;
    }
    Mat<T> cctx(1, cfg.d);
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto hi = static_cast<std::size_t>(h);
      auto qh = cq.middleCols(h * dk, dk);
      auto kh = enc.k_enc[li].value().middleCols(h * dk, dk);
      auto vh = enc.v_enc[li].value().middleCols(h * dk, dk);
      Mat<T> cross = qh * kh.transpose();                  // 1 x N, unscaled
      Mat<T> a;
      if (cfg.aoa_enabled) {
        Mat<T>& hist = st.cam_hist[li][hi];
        if (hist.rows() != t_prev)
          throw DecodeError("decode_hidden: attention-map cache desynchronized");
        Mat<T> cam_row = detail::softmax_row<T>(cross);
        Mat<T> sam;
        if (cfg.aoa_sam_reuse_self) {
          sam = self_prob_rows[hi];
        } else {
          auto ksh = st.k_sam[li].middleCols(h * dk, dk);
          sam = detail::softmax_row<T>(qh * ksh.transpose());  // 1 x (t_prev+1)
        }
        // mix the fresh map with the reused history, then renormalize
        hist.conservativeResize(t_prev + 1, cross.cols());
        hist.row(t_prev) = cam_row;
        Mat<T> mix = sam * hist;
        a = detail::softmax_row<T>(
            Mat<T>(cross + mix * (cfg.aoa_mix_zero ? T(0) : inv_sqrt_dk)));
      } else {
        a = detail::softmax_row<T>(cross);
      }
      cctx.middleCols(h * dk, dk) = a * vh;
    }
    Mat<T> cross_out = (cctx * (*params.value(cr + ".wo"))).rowwise() +
                       params.value(cr + ".bo")->row(0);
    x = detail::ln_row<T>(cfg.residual_enabled ? Mat<T>(x + cross_out) : cross_out,
                          *params.value(base + ".ln2.g"), *params.value(base + ".ln2.b"));

    Mat<T> hidden = detail::gelu_mat<T>(
        detail::affine_row(x, params, base + ".ff.w1", base + ".ff.b1"));
    Mat<T> ffo = (hidden * (*params.value(base + ".ff.w2"))).rowwise() +
                 params.value(base + ".ff.b2")->row(0);
    x = detail::ln_row<T>(cfg.residual_enabled ? Mat<T>(x + ffo) : ffo,
                          *params.value(base + ".ln3.g"), *params.value(base + ".ln3.b"));
  }
  st.t = t_prev + 1;
  return x;
}

// Raw-matrix pointer head (same arithmetic as the taped version).
template <class T>
Mat<T> pointer_logits_row(const Mat<T>& h_d, const EncoderOutput<T>& enc,
                          const ModelParams<T>& params) {
  const ModelConfig& cfg = params.cfg;
  Mat<T> mlp = detail::gelu_mat<T>(
      (enc.h_e.value() * (*params.value("ptr.w"))).rowwise() +
      params.value("ptr.b")->row(0));
  Mat<T> fused = T(cfg.alpha) * mlp + (T(1) - T(cfg.alpha)) * enc.token_embeds.value();
  Mat<T> out(1, fused.rows() + params.value("cat_w")->rows());
  out.leftCols(fused.rows()) = h_d * fused.transpose();
  out.rightCols(params.value("cat_w")->rows()) = h_d * params.value("cat_w")->transpose();
  return out;
}

// Argmax over the legal labels; ties break toward the lowest id so decoding
// is deterministic. An empty legal set is a caller bug.
template <class T>
int masked_argmax(const Mat<T>& row, const std::vector<bool>& legal) {
  int best = -1;
  T best_v = -std::numeric_limits<T>::infinity();
  for (Eigen::Index j = 0; j < row.cols(); ++j) {
    if (!legal[static_cast<std::size_t>(j)]) continue;
    if (best < 0 || row(0, j) > best_v) {
      best = static_cast<int>(j);
      best_v = row(0, j);
    }
  }
  if (best < 0) throw DecodeError("masked_argmax: no legal label");
  return best;
}

struct GenerateOptions {
  int max_steps = 64;
  bool constrained = true;  // grammar masking on by default
};

// Conservative step budget: room for every intent and observed slot triplet
// plus slack, capped.
inline int default_max_steps(const std::vector<Utterance>& corpus) {
  std::size_t max_intents = 1, max_slots = 0;
  for (const auto& u : corpus) {
    max_intents = std::max(max_intents, u.intents.size());
    if (u.bio_tags.size() == u.tokens.size() && check_bio(u.bio_tags).empty())
      max_slots = std::max(max_slots, spans_from_bio(u.bio_tags).size());
  }
  return static_cast<int>(std::min<std::size_t>(64, 2 + 3 * max_intents + 3 * max_slots));
}

// Greedy autoregressive generation for one utterance. Stops at the
// terminator label or after max_steps (truncated flag + longest valid
// prefix). With the constraint disabled, a malformed sequence raises
// ParseError; batch callers decide how to score it.
template <class T>
Prediction greedy_generate(const std::vector<int>& input_ids, const ModelParams<T>& params,
                           const LabelVocabulary& vocab, const GenerateOptions& opts = {}) {
  const ModelConfig& cfg = params.cfg;
  if (opts.max_steps < 2) throw DecodeError("greedy_generate: max_steps must be >= 2");
  std::mt19937_64 rng(0);  // eval mode: never consulted
  auto enc = encode(input_ids, params, static_cast<Tape<T>*>(nullptr), rng, false);
  const int n_words = static_cast<int>(input_ids.size()) - 1;
  LabelSpace space(n_words, cfg.n_intents, cfg.n_slots);
  DecodeState<T> st(space, cfg.n_dec_layers, cfg.n_heads);
  Mat<T> pe = sinusoidal_pe<T>(cfg.max_len, cfg.d);

  Prediction pred;
  while (st.t < opts.max_steps) {
    if (st.t + 1 > cfg.max_len) break;  // decoder position table exhausted
    Mat<T> x(1, cfg.d);
    if (st.t == 0) {
      x = params.value("tok_emb")->row(Tokenizer::kSos);
    } else {
      int prev = st.emitted.back();
      if (space.is_position(prev))
        x = enc.token_embeds.value().row(prev);
      else
        x = params.value("cat_emb")->row(prev - space.intent_base());
    }
    x += pe.row(st.t);
    Mat<T> h = decode_hidden(st, x, enc, params);
    Mat<T> logits = pointer_logits_row(h, enc, params);
    int label;
    if (opts.constrained) {
      label = masked_argmax(logits, st.grammar.legal_mask());
    } else {
      std::vector<bool> all(static_cast<std::size_t>(space.size()), true);
      label = masked_argmax(logits, all);
    }
    st.emitted.push_back(label);
    if (opts.constrained) st.grammar.advance(label);
    if (space.is_eos(label)) break;
  }
  pred.labels = st.emitted;
  const bool stopped = !st.emitted.empty() && space.is_eos(st.emitted.back());
  if (stopped) {
    // constrained mode cannot fail here (masking soundness); unconstrained
    // mode lets the parse error surface to the caller
    pred.target = decode_target(st.emitted, n_words, vocab);
  } else {
    pred.truncated = true;
    try {
      pred.target = decode_target(st.emitted, n_words, vocab);
    } catch (const ParseError& e) {
      if (!opts.constrained) throw;
      pred.target = e.prefix;  // constrained: only the terminator is missing
    }
  }
  return pred;
}

struct BatchStats {
  double utterances_per_second = 0.0;
  int truncated = 0;
  int malformed = 0;
};

// Order-preserving parallel map of greedy_generate over a corpus. Params are
// shared read-only; each worker owns its states. Malformed unconstrained
// outputs become flagged predictions instead of aborting the batch.
template <class T>
std::vector<Prediction> predict_batch(const std::vector<Utterance>& corpus,
                                      const ModelParams<T>& params,
                                      const LabelVocabulary& vocab,
                                      const GenerateOptions& opts = {}, int n_threads = 1,
                                      BatchStats* stats = nullptr) {
  std::vector<Prediction> out(corpus.size());
  const auto start = std::chrono::steady_clock::now();
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= corpus.size() || failed.load()) return;
      try {
        out[i] = greedy_generate(model_input_ids(corpus[i]), params, vocab, opts);
      } catch (const ParseError& e) {
        out[i].target = e.prefix;
        out[i].malformed = true;
      } catch (...) {
        // anything else (numeric faults, bad ids) aborts the batch; workers
        // must not let it escape a std::thread
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  if (stats) {
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats->utterances_per_second = secs > 0 ? static_cast<double>(corpus.size()) / secs : 0.0;
    for (const auto& p : out) {
      stats->truncated += p.truncated ? 1 : 0;
      stats->malformed += p.malformed ? 1 : 0;
    }
  }
  return out;
}

}  // namespace gslu
