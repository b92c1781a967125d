#pragma once

#include "gslu/corpus.hpp"
#include "gslu/grammar.hpp"
#include "gslu/tensor.hpp"
#include "gslu/util.hpp"

#include <cctype>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace gslu {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Architecture hyper-parameters plus the ablation/debug switches. The
// category count is carried split into intents and slots because the output
// grammar needs the boundary; the combined label-category total is L().
struct ModelConfig {
  int d = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ff = 256;
  double alpha = 0.5;  // pointer fusion weight between MLP(H^e) and E_X
  int vocab_size = 0;
  int n_intents = 0;
  int n_slots = 0;
  int max_len = 64;
  double dropout_p = 0.1;
  bool aoa_enabled = true;
  // SAM source: dedicated key projection (default) or the probabilities the
  // same layer's self-attention sublayer already produced.
  bool aoa_sam_reuse_self = false;
  // Debug switches: zero the attention-mix term / disable residual bypass.
  bool aoa_mix_zero = false;
  bool residual_enabled = true;

  int L() const { return n_intents + n_slots; }
  int d_k() const { return d / n_heads; }

  void validate() const {
    if (d < 1 || n_heads < 1 || n_enc_layers < 1 || n_dec_layers < 1 || d_ff < 1)
      throw ModelError("config: all extents must be >= 1");
    if (d % n_heads != 0) throw ModelError("config: d must be divisible by n_heads");
    if (alpha < 0.0 || alpha > 1.0) throw ModelError("config: alpha must lie in [0,1]");
    if (vocab_size < 4) throw ModelError("config: vocab_size must cover the special tokens");
    if (n_intents < 1 || n_slots < 0) throw ModelError("config: label counts invalid");
    if (max_len < 1) throw ModelError("config: max_len must be >= 1");
    if (dropout_p < 0.0 || dropout_p >= 1.0) throw ModelError("config: dropout_p in [0,1)");
  }
};

// Named parameter registry. Values and gradients are persistent buffers;
// tapes borrow them per forward pass, the optimizer walks them by name.
template <class T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<std::string> order;
  std::unordered_map<std::string, std::shared_ptr<Mat<T>>> val;
  std::unordered_map<std::string, std::shared_ptr<Mat<T>>> grad;

  void add(const std::string& name, Mat<T> init) {
    if (val.count(name)) throw ModelError("duplicate parameter name: " + name);
    order.push_back(name);
    grad[name] = std::make_shared<Mat<T>>(Mat<T>::Zero(init.rows(), init.cols()));
    val[name] = std::make_shared<Mat<T>>(std::move(init));
  }

  const std::shared_ptr<Mat<T>>& value(const std::string& name) const {
    auto it = val.find(name);
    if (it == val.end()) throw ModelError("unknown parameter: " + name);
    return it->second;
  }

  // Tape-attached view when training, shared-buffer constant otherwise.
  Tensor<T> get(Tape<T>* tape, const std::string& name) const {
    if (tape) return tape->watch(value(name), grad.at(name));
    Tensor<T> t;
    t.val = value(name);
    return t;
  }

  void zero_grads() {
    for (auto& [name, g] : grad) g->setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& name : order) n += static_cast<std::size_t>(val.at(name)->size());
    return n;
  }

  bool all_finite() const {
    for (const auto& name : order)
      if (!val.at(name)->allFinite()) return false;
    return true;
  }

  // Deep copy: fresh buffers, so the copy is immune to further updates.
  ModelParams<T> clone() const {
    ModelParams<T> c;
    c.cfg = cfg;
    c.order = order;
    for (const auto& name : order) {
      c.val[name] = std::make_shared<Mat<T>>(*val.at(name));
      c.grad[name] = std::make_shared<Mat<T>>(*grad.at(name));
    }
    return c;
  }

  static ModelParams<T> init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams<T> p;
    p.cfg = cfg;
    std::mt19937_64 rng(seed);
    const T sigma = T(0.02);
    auto w = [&](const std::string& name, int r, int c) {
      p.add(name, random_normal<T>(r, c, sigma, rng));
    };
    auto zeros = [&](const std::string& name, int r, int c) {
      p.add(name, Mat<T>::Zero(r, c));
    };
    auto ln = [&](const std::string& name) {
      p.add(name + ".g", Mat<T>::Ones(1, cfg.d));
      p.add(name + ".b", Mat<T>::Zero(1, cfg.d));
    };
    auto attn = [&](const std::string& name) {
      for (const char* part : {"wq", "wk", "wv", "wo"}) w(name + "." + part, cfg.d, cfg.d);
      for (const char* part : {"bq", "bk", "bv", "bo"}) zeros(name + "." + part, 1, cfg.d);
    };
    auto ff = [&](const std::string& name) {
      w(name + ".w1", cfg.d, cfg.d_ff);
      zeros(name + ".b1", 1, cfg.d_ff);
      w(name + ".w2", cfg.d_ff, cfg.d);
      zeros(name + ".b2", 1, cfg.d);
    };
    w("tok_emb", cfg.vocab_size, cfg.d);
    w("cat_emb", cfg.L(), cfg.d);
    w("cat_w", cfg.L() + 1, cfg.d);  // final row scores the terminator label
    for (int i = 0; i < cfg.n_enc_layers; ++i) {
      std::string base = "enc" + std::to_string(i);
      attn(base + ".attn");
      ln(base + ".ln1");
      ff(base + ".ff");
      ln(base + ".ln2");
    }
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
      std::string base = "dec" + std::to_string(i);
      attn(base + ".self");
      ln(base + ".ln1");
      std::string cr = base + ".cross";
      w(cr + ".wq", cfg.d, cfg.d);
      w(cr + ".wk_enc", cfg.d, cfg.d);
      w(cr + ".wk_sam", cfg.d, cfg.d);
      w(cr + ".wv", cfg.d, cfg.d);
      w(cr + ".wo", cfg.d, cfg.d);
      for (const char* part : {"bq", "bk_enc", "bk_sam", "bv", "bo"})
        zeros(cr + "." + std::string(part), 1, cfg.d);
      ln(base + ".ln2");
      ff(base + ".ff");
      ln(base + ".ln3");
    }
    w("ptr.w", cfg.d, cfg.d);
    zeros("ptr.b", 1, cfg.d);
    return p;
  }
};

// Classic fixed sinusoidal position table, one row per position.
template <class T>
Mat<T> sinusoidal_pe(int max_len, int d) {
  Mat<T> pe(max_len, d);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe(pos, i) = static_cast<T>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

// Splits a category name on camel-case boundaries, underscores and hyphens:
// "AddToPlaylist" -> {add, to, playlist}, "entity_name" -> {entity, name}.
inline std::vector<std::string> split_category_name(const std::string& name) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      words.push_back(lowercase(cur));
      cur.clear();
    }
  };
  for (std::size_t i = 0; i < name.size(); ++i) {
    char c = name[i];
    if (c == '_' || c == '-' || c == ' ') {
      flush();
    } else {
      if (std::isupper(static_cast<unsigned char>(c)) && !cur.empty() &&
          !std::isupper(static_cast<unsigned char>(cur.back())))
        flush();
      cur.push_back(c);
    }
  }
  flush();
  return words;
}

// Category embedding rows: mean of the in-vocabulary constituent word
// embeddings; seeded random normal when every constituent is unknown.
template <class T>
Mat<T> init_category_embeddings(const std::vector<std::string>& names,
                                const Mat<T>& tok_emb, const Tokenizer& tokenizer,
                                std::uint64_t seed) {
  if (names.empty()) throw ModelError("category list is empty");
  const int d = static_cast<int>(tok_emb.cols());
  Mat<T> out(static_cast<Eigen::Index>(names.size()), d);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < names.size(); ++i) {
    Mat<T> acc = Mat<T>::Zero(1, d);
    int hits = 0;
    for (const auto& word : split_category_name(names[i])) {
      int id = tokenizer.id(word);
      if (id != Tokenizer::kUnk) {
        acc += tok_emb.row(id);
        ++hits;
      }
    }
    if (hits > 0)
      out.row(static_cast<Eigen::Index>(i)) = acc / T(hits);
    else
      out.row(static_cast<Eigen::Index>(i)) = random_normal<T>(1, d, T(0.02), rng);
  }
  return out;
}

template <class T>
struct EncoderOutput {
  Tensor<T> h_e;           // N x d final encoder states
  Tensor<T> token_embeds;  // N x d raw input-token embeddings (the E_X rows)
  std::vector<int> input_ids;
  // Per-decoder-layer key/value projections of h_e for the cross sublayers
  // (heads live in column blocks of width d_k).
  std::vector<Tensor<T>> k_enc, v_enc;
};

// Value snapshots of every attention distribution in one decoder forward,
// indexed [layer][head]; filled only when a trace is requested.
template <class T>
struct AoaTrace {
  std::vector<std::vector<Mat<T>>> self_probs;  // t x t
  std::vector<std::vector<Mat<T>>> cam;         // t x N
  std::vector<std::vector<Mat<T>>> sam;         // t x t
  std::vector<std::vector<Mat<T>>> mix;         // t x N rows of SAM·CAM
  std::vector<std::vector<Mat<T>>> a;           // t x N
};

namespace detail {

template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return add_bias(matmul(x, w), b);
}

// Residual + layer-norm closing a sublayer (residual optional for the
// zero-weight hand-trace).
template <class T>
Tensor<T> close_sublayer(const Tensor<T>& input, Tensor<T> out, const ModelConfig& cfg,
                         const ModelParams<T>& params, Tape<T>* tape,
                         const std::string& ln_name, std::mt19937_64& rng, bool training) {
  out = dropout(out, cfg.dropout_p, rng, training);
  if (cfg.residual_enabled) out = add(input, out);
  return layer_norm(out, params.get(tape, ln_name + ".g"), params.get(tape, ln_name + ".b"));
}

// Standard scaled multi-head attention; mask (if any) is shared by heads.
// Per-head probability matrices are written to *probs when requested.
template <class T>
Tensor<T> self_attention(const Tensor<T>& x, const ModelConfig& cfg,
                         const ModelParams<T>& params, Tape<T>* tape,
                         const std::string& base, const BoolMat* mask,
                         std::vector<Tensor<T>>* probs = nullptr) {
  auto q = affine(x, params.get(tape, base + ".wq"), params.get(tape, base + ".bq"));
  auto k = affine(x, params.get(tape, base + ".wk"), params.get(tape, base + ".bk"));
  auto v = affine(x, params.get(tape, base + ".wv"), params.get(tape, base + ".bv"));
  const int dk = cfg.d_k();
  const T inv_sqrt_dk = T(1) / std::sqrt(T(dk));
  Tensor<T> ctx;
  for (int h = 0; h < cfg.n_heads; ++h) {
    auto qh = slice_cols(q, h * dk, dk);
    auto kh = slice_cols(k, h * dk, dk);
    auto vh = slice_cols(v, h * dk, dk);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    auto p = softmax_rows(scores, mask);
    if (probs) probs->push_back(p);
    auto head = matmul(p, vh);
    ctx = h == 0 ? head : concat_cols(ctx, head);
  }
  return affine(ctx, params.get(tape, base + ".wo"), params.get(tape, base + ".bo"));
}

}  // namespace detail

// Encoder forward. `ids` is the full model input: utterance words plus the
// trailing sentinel token whose position serves as the exclusive-end pointer
// target. Also precomputes the cross-attention key/value projections every
// decoder layer will need. `self_probs`, when given, receives every layer's
// per-head attention distribution snapshot.
template <class T>
EncoderOutput<T> encode(const std::vector<int>& ids, const ModelParams<T>& params,
                        Tape<T>* tape, std::mt19937_64& rng, bool training,
                        std::vector<std::vector<Mat<T>>>* self_probs = nullptr) {
  const ModelConfig& cfg = params.cfg;
  const int n = static_cast<int>(ids.size());
  if (n == 0) throw ModelError("encode: empty input");
  if (n > cfg.max_len)
    throw ModelError("encode: input length " + std::to_string(n) + " exceeds max_len " +
                     std::to_string(cfg.max_len));
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size) throw ModelError("encode: token id out of range");

  EncoderOutput<T> out;
  out.input_ids = ids;
  out.token_embeds = gather_rows(params.get(tape, "tok_emb"), ids);
  auto pe = constant<T>(sinusoidal_pe<T>(cfg.max_len, cfg.d).topRows(n));
  auto x = dropout(add(out.token_embeds, pe), cfg.dropout_p, rng, training);
  for (int i = 0; i < cfg.n_enc_layers; ++i) {
    std::string base = "enc" + std::to_string(i);
    std::vector<Tensor<T>> probs;
    auto attn = detail::self_attention(x, cfg, params, tape, base + ".attn", nullptr,
                                       self_probs ? &probs : nullptr);
    if (self_probs) {
      self_probs->emplace_back();
      for (const auto& p : probs) self_probs->back().push_back(p.value());
    }
    x = detail::close_sublayer(x, attn, cfg, params, tape, base + ".ln1", rng, training);
    auto hidden = gelu(detail::affine(x, params.get(tape, base + ".ff.w1"),
                                      params.get(tape, base + ".ff.b1")));
    auto ffo = detail::affine(hidden, params.get(tape, base + ".ff.w2"),
                              params.get(tape, base + ".ff.b2"));
    x = detail::close_sublayer(x, ffo, cfg, params, tape, base + ".ln2", rng, training);
  }
  out.h_e = x;
  for (int i = 0; i < cfg.n_dec_layers; ++i) {
    std::string cr = "dec" + std::to_string(i) + ".cross";
    out.k_enc.push_back(detail::affine(x, params.get(tape, cr + ".wk_enc"),
                                       params.get(tape, cr + ".bk_enc")));
    out.v_enc.push_back(detail::affine(x, params.get(tape, cr + ".wv"),
                                       params.get(tape, cr + ".bv")));
  }
  return out;
}

// Decoder-input embedding rows for a label prefix: row 0 is the start token,
// row r embeds labels[r-1] (pointer labels feed back the pointed-to token's
// embedding, category labels their category embedding), all plus the step
// position encoding.
template <class T>
Tensor<T> embed_labels(const std::vector<int>& prev_labels, const EncoderOutput<T>& enc,
                       const ModelParams<T>& params, const LabelSpace& space,
                       Tape<T>* tape) {
  const ModelConfig& cfg = params.cfg;
  const int t = static_cast<int>(prev_labels.size()) + 1;
  if (t > cfg.max_len) throw ModelError("embed_labels: step count exceeds max_len");
  std::vector<int> from_tok(static_cast<std::size_t>(t), -1);
  std::vector<int> from_input(static_cast<std::size_t>(t), -1);
  std::vector<int> from_cat(static_cast<std::size_t>(t), -1);
  from_tok[0] = Tokenizer::kSos;
  for (int r = 1; r < t; ++r) {
    int label = prev_labels[static_cast<std::size_t>(r - 1)];
    if (space.is_position(label))
      from_input[static_cast<std::size_t>(r)] = label;
    else if (space.is_intent(label) || space.is_slot(label))
      from_cat[static_cast<std::size_t>(r)] = label - space.intent_base();
    else
      throw ModelError("embed_labels: label " + std::to_string(label) +
                       " is not embeddable (terminator or out of range)");
  }
  auto rows = add(gather_rows(params.get(tape, "tok_emb"), from_tok),
                  add(gather_rows(enc.token_embeds, from_input),
                      gather_rows(params.get(tape, "cat_emb"), from_cat)));
  auto pe = constant<T>(sinusoidal_pe<T>(cfg.max_len, cfg.d).topRows(t));
  return add(rows, pe);
}

// Full-sequence decoder forward: all steps at once under causal masks. Row r
// of the result is the hidden state that predicts the label at step r+1.
// Because every attention here is a row-wise softmax, row r of the fresh
// cross-attention map equals the row an incremental decoder would compute at
// step r+1, which is what makes cache reuse exact.
template <class T>
Tensor<T> decode_full(const std::vector<int>& prev_labels, const EncoderOutput<T>& enc,
                      const ModelParams<T>& params, const LabelSpace& space, Tape<T>* tape,
                      std::mt19937_64& rng, bool training, AoaTrace<T>* trace = nullptr) {
  const ModelConfig& cfg = params.cfg;
  const int t = static_cast<int>(prev_labels.size()) + 1;
  const int dk = cfg.d_k();
  const T inv_sqrt_dk = T(1) / std::sqrt(T(dk));
  auto x = embed_labels(prev_labels, enc, params, space, tape);
  x = dropout(x, cfg.dropout_p, rng, training);
  BoolMat causal = causal_mask(t);
  if (trace) {
    trace->self_probs.assign(cfg.n_dec_layers, {});
    trace->cam.assign(cfg.n_dec_layers, {});
    trace->sam.assign(cfg.n_dec_layers, {});
    trace->mix.assign(cfg.n_dec_layers, {});
    trace->a.assign(cfg.n_dec_layers, {});
  }
  for (int i = 0; i < cfg.n_dec_layers; ++i) {
    std::string base = "dec" + std::to_string(i);
    std::vector<Tensor<T>> self_probs;
    auto attn = detail::self_attention(x, cfg, params, tape, base + ".self", &causal,
                                       &self_probs);
    if (trace)
      for (const auto& p : self_probs) trace->self_probs[i].push_back(p.value());
    x = detail::close_sublayer(x, attn, cfg, params, tape, base + ".ln1", rng, training);

    // attention-over-attention cross sublayer
    std::string cr = base + ".cross";
    auto q = detail::affine(x, params.get(tape, cr + ".wq"), params.get(tape, cr + ".bq"));
    Tensor<T> k_sam;
    if (cfg.aoa_enabled && !cfg.aoa_sam_reuse_self)
      k_sam = detail::affine(x, params.get(tape, cr + ".wk_sam"),
                             params.get(tape, cr + ".bk_sam"));
    Tensor<T> ctx;
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto qh = slice_cols(q, h * dk, dk);
      auto kh = slice_cols(enc.k_enc[static_cast<std::size_t>(i)], h * dk, dk);
      auto vh = slice_cols(enc.v_enc[static_cast<std::size_t>(i)], h * dk, dk);
      auto cross = matmul(qh, transpose(kh));  // t x N, deliberately unscaled
      Tensor<T> a;
      if (cfg.aoa_enabled) {
        auto cam = softmax_rows(cross);
        Tensor<T> sam;
        if (cfg.aoa_sam_reuse_self) {
          sam = self_probs[static_cast<std::size_t>(h)];
        } else {
          auto ksh = slice_cols(k_sam, h * dk, dk);
          sam = softmax_rows(matmul(qh, transpose(ksh)), &causal);
        }
        auto mix = matmul(sam, cam);
        a = softmax_rows(add(cross, scale(mix, cfg.aoa_mix_zero ? T(0) : inv_sqrt_dk)));
        if (trace) {
          trace->cam[i].push_back(cam.value());
          trace->sam[i].push_back(sam.value());
          trace->mix[i].push_back(mix.value());
          trace->a[i].push_back(a.value());
        }
      } else {
        a = softmax_rows(cross);
        if (trace) {
          trace->cam[i].push_back(a.value());
          trace->a[i].push_back(a.value());
        }
      }
      auto head = matmul(a, vh);
      ctx = h == 0 ? head : concat_cols(ctx, head);
    }
    auto cross_out =
        detail::affine(ctx, params.get(tape, cr + ".wo"), params.get(tape, cr + ".bo"));
    x = detail::close_sublayer(x, cross_out, cfg, params, tape, base + ".ln2", rng, training);

    auto hidden = gelu(detail::affine(x, params.get(tape, base + ".ff.w1"),
                                      params.get(tape, base + ".ff.b1")));
    auto ffo = detail::affine(hidden, params.get(tape, base + ".ff.w2"),
                              params.get(tape, base + ".ff.b2"));
    x = detail::close_sublayer(x, ffo, cfg, params, tape, base + ".ln3", rng, training);
  }
  return x;  // t x d
}

// Pointer-network head over the whole label space: position scores against
// the fused encoder representation, category scores against the prediction
// weights (whose final row scores the terminator). Output columns follow the
// label-space id layout.
template <class T>
Tensor<T> pointer_logits(const Tensor<T>& h_d, const EncoderOutput<T>& enc,
                         const ModelParams<T>& params, Tape<T>* tape) {
  const ModelConfig& cfg = params.cfg;
  auto mlp = gelu(detail::affine(enc.h_e, params.get(tape, "ptr.w"),
                                 params.get(tape, "ptr.b")));
  auto fused = add(scale(mlp, T(cfg.alpha)), scale(enc.token_embeds, T(1) - T(cfg.alpha)));
  auto pos_logits = matmul(h_d, transpose(fused));                       // t x N
  auto cat_logits = matmul(h_d, transpose(params.get(tape, "cat_w")));   // t x (L+1)
  return concat_cols(pos_logits, cat_logits);
}

// The model input for an utterance: its token ids plus the trailing sentinel.
inline std::vector<int> model_input_ids(const Utterance& u) {
  if (u.token_ids.size() != u.tokens.size())
    throw ModelError("utterance has no token ids; apply a tokenizer first");
  std::vector<int> ids = u.token_ids;
  ids.push_back(Tokenizer::kEos);
  return ids;
}

}  // namespace gslu
