#include "plex/nn/transformer.hpp"

#include <cmath>

namespace plex::nn {

namespace ops = plex::tensor;

std::string to_string(PosMode mode) {
  switch (mode) {
    case PosMode::absolute:
      return "absolute";
    case PosMode::global:
      return "global";
    case PosMode::relative:
      return "relative";
  }
  return "?";
}

PosMode parse_pos_mode(const std::string& name) {
  if (name == "absolute") return PosMode::absolute;
  if (name == "global") return PosMode::global;
  if (name == "relative") return PosMode::relative;
  throw ContractError("unknown positional mode '" + name + "'");
}

void TransformerConfig::validate() const {
  if (n_layers == 0 || n_heads == 0 || hidden == 0) {
    throw ContractError("transformer: layers, heads and hidden size must be positive");
  }
  if (hidden % n_heads != 0) {
    throw ContractError("transformer: hidden size " + std::to_string(hidden) + " not divisible by " +
                        std::to_string(n_heads) + " heads");
  }
  if (context_steps == 0) {
    throw ContractError("transformer: context size must be at least 1");
  }
  if (pos_mode == PosMode::global && t_max == 0) {
    throw ContractError("transformer: global mode needs t_max > 0");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ContractError("transformer: dropout must be in [0, 1)");
  }
}

template <typename T>
Tensor<T> sinusoidal_table(std::size_t rows, std::size_t hidden) {
  if (hidden % 2 != 0) {
    throw ContractError("sinusoidal_table: hidden size must be even");
  }
  std::vector<T> values(rows * hidden);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < hidden / 2; ++j) {
      const double angle = static_cast<double>(i) / std::pow(10000.0, 2.0 * j / static_cast<double>(hidden));
      values[i * hidden + 2 * j] = static_cast<T>(std::sin(angle));
      values[i * hidden + 2 * j + 1] = static_cast<T>(std::cos(angle));
    }
  }
  return Tensor<T>::from({rows, hidden}, std::move(values));
}

template <typename T>
Tensor<T> causal_mask(std::size_t n) {
  std::vector<T> values(n * n, T{0});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) values[i * n + j] = static_cast<T>(-1e30);
  }
  return Tensor<T>::from({n, n}, std::move(values));
}

template <typename T>
Tensor<T> relative_attention_scores(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& rel,
                                    const Tensor<T>& u, const Tensor<T>& v) {
  const std::size_t n = q.dim(0), d = q.dim(1);
  if (rel.dim(0) < n) {
    throw DimensionError("relative_attention_scores: " + std::to_string(n) + " tokens but only " +
                         std::to_string(rel.dim(0)) + " distances");
  }
  const Tensor<T> content = ops::matmul(ops::add_row(q, u), ops::transpose(k));
  const Tensor<T> dist = ops::matmul(ops::add_row(q, v), ops::transpose(ops::slice_rows(rel, 0, n)));
  const Tensor<T> scores = ops::add(content, ops::relative_gather(dist));
  return ops::add(ops::scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))), causal_mask<T>(n));
}

template <typename T>
void Block<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  ln1.collect(prefix + ".ln1", out);
  qkv.collect(prefix + ".attn.qkv", out);
  attn_proj.collect(prefix + ".attn.proj", out);
  if (rel.defined()) {
    out.push_back({prefix + ".attn.rel", rel});
    out.push_back({prefix + ".attn.u", u});
    out.push_back({prefix + ".attn.v", v});
  }
  ln2.collect(prefix + ".ln2", out);
  fc.collect(prefix + ".mlp.fc", out);
  mlp_proj.collect(prefix + ".mlp.proj", out);
}

template <typename T>
Transformer<T>::Transformer(const TransformerConfig& cfg, std::size_t max_tokens, Rng& rng)
    : cfg_(cfg), max_tokens_(max_tokens) {
  cfg_.validate();
  const std::size_t h = cfg_.hidden;
  constexpr double kStd = 0.02;
  ln_in_ = LayerNorm<T>(h);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    Block<T> b;
    b.ln1 = LayerNorm<T>(h);
    b.qkv = Linear<T>(h, 3 * h, kStd, rng);
    b.attn_proj = Linear<T>(h, h, kStd, rng);
    b.ln2 = LayerNorm<T>(h);
    b.fc = Linear<T>(h, 4 * h, kStd, rng);
    b.mlp_proj = Linear<T>(4 * h, h, kStd, rng);
    blocks_.push_back(std::move(b));
  }
  // Positional parameters are drawn last so the shared weights do not depend on the mode.
  if (cfg_.pos_mode == PosMode::relative) {
    for (auto& b : blocks_) {
      b.rel = normal_param<T>({max_tokens_, h}, kStd, rng);
      b.u = normal_param<T>({h}, kStd, rng);
      b.v = normal_param<T>({h}, kStd, rng);
    }
  }
  ln_f_ = LayerNorm<T>(h);
  if (cfg_.pos_mode == PosMode::global) {
    // unit-variance rows, as an embedding table is usually initialized
    global_table_ = normal_param<T>({cfg_.t_max, h}, 1.0, rng);
  } else if (cfg_.pos_mode == PosMode::absolute) {
    sinusoid_ = sinusoidal_table<T>(max_tokens_, h);
  }
}

template <typename T>
Tensor<T> Transformer<T>::global_embedding(std::size_t t_abs) const {
  if (cfg_.pos_mode != PosMode::global) {
    throw ContractError("global_embedding: transformer is in " + to_string(cfg_.pos_mode) + " mode");
  }
  if (t_abs >= cfg_.t_max) {
    throw RangeError("timestep " + std::to_string(t_abs) + " outside the global position table (T_max " +
                     std::to_string(cfg_.t_max) + ")");
  }
  return ops::reshape(ops::index_rows(global_table_, {t_abs}), {cfg_.hidden});
}

template <typename T>
Tensor<T> Transformer<T>::attention(const Block<T>& b, const Tensor<T>& x, const Tensor<T>& mask) const {
  const std::size_t h = cfg_.hidden, dh = cfg_.head_dim();
  const Tensor<T> qkv = b.qkv(x);
  const Tensor<T> q = ops::slice_cols(qkv, 0, h);
  const Tensor<T> k = ops::slice_cols(qkv, h, 2 * h);
  const Tensor<T> v = ops::slice_cols(qkv, 2 * h, 3 * h);
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> heads;
  heads.reserve(cfg_.n_heads);
  for (std::size_t hd = 0; hd < cfg_.n_heads; ++hd) {
    const std::size_t c0 = hd * dh, c1 = c0 + dh;
    const Tensor<T> qh = ops::slice_cols(q, c0, c1);
    const Tensor<T> kh = ops::slice_cols(k, c0, c1);
    Tensor<T> scores;
    if (cfg_.pos_mode == PosMode::relative) {
      scores = relative_attention_scores(qh, kh, ops::slice_cols(b.rel, c0, c1),
                                         ops::slice_cols(ops::reshape(b.u, {1, h}), c0, c1),
                                         ops::slice_cols(ops::reshape(b.v, {1, h}), c0, c1));
    } else {
      scores = ops::add(ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt), mask);
    }
    heads.push_back(ops::matmul(ops::softmax(scores, 1), ops::slice_cols(v, c0, c1)));
  }
  return b.attn_proj(cfg_.n_heads == 1 ? heads.front() : ops::concat_cols(heads));
}

template <typename T>
Tensor<T> Transformer<T>::forward(const Tensor<T>& tokens, const TokenPositions& pos, Rng* dropout_rng) const {
  if (tokens.rank() != 2 || tokens.dim(1) != cfg_.hidden) {
    throw DimensionError("transformer: tokens must be [n x " + std::to_string(cfg_.hidden) + "], got " +
                         tensor::shape_string(tokens.shape()));
  }
  const std::size_t n = tokens.dim(0);
  if (n == 0 || pos.pad + n > max_tokens_) {
    throw DimensionError("transformer: " + std::to_string(pos.pad + n) + " token slots exceed context of " +
                         std::to_string(max_tokens_));
  }
  const T p = static_cast<T>(dropout_rng ? cfg_.dropout : 0.0);

  Tensor<T> x = tokens;
  if (cfg_.pos_mode == PosMode::global) {
    if (pos.timesteps.size() != n) {
      throw ContractError("transformer: global mode needs one absolute timestep per token");
    }
    for (auto t : pos.timesteps) {
      if (t >= cfg_.t_max) {
        throw RangeError("timestep " + std::to_string(t) + " outside the global position table (T_max " +
                         std::to_string(cfg_.t_max) + ")");
      }
    }
    x = ops::add(x, ops::index_rows(global_table_, pos.timesteps));
  }
  x = ln_in_(x);
  if (cfg_.pos_mode == PosMode::absolute) {
    x = ops::add(x, ops::slice_rows(sinusoid_, pos.pad, pos.pad + n));
  }
  if (p > T{0}) x = ops::dropout(x, p, *dropout_rng);

  const Tensor<T> mask = causal_mask<T>(n);
  for (const auto& b : blocks_) {
    Tensor<T> a = attention(b, b.ln1(x), mask);
    if (p > T{0}) a = ops::dropout(a, p, *dropout_rng);
    x = ops::add(x, a);
    Tensor<T> m = b.mlp_proj(ops::gelu(b.fc(b.ln2(x))));
    if (p > T{0}) m = ops::dropout(m, p, *dropout_rng);
    x = ops::add(x, m);
  }
  return ln_f_(x);
}

template <typename T>
std::string Transformer<T>::block_prefix(const std::string& prefix, std::size_t layer) const {
  return prefix + ".blocks." + std::to_string(layer);
}

template <typename T>
void Transformer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  if (global_table_.defined()) out.push_back({prefix + ".pos.global", global_table_});
  ln_in_.collect(prefix + ".ln_in", out);
  for (std::size_t l = 0; l < blocks_.size(); ++l) blocks_[l].collect(block_prefix(prefix, l), out);
  ln_f_.collect(prefix + ".ln_f", out);
}

template <typename T>
void Transformer<T>::collect_block(std::size_t layer, const std::string& prefix, ParamList<T>& out) const {
  if (layer >= blocks_.size()) {
    throw RangeError("transformer has no block " + std::to_string(layer));
  }
  blocks_[layer].collect(block_prefix(prefix, layer), out);
}

template <typename T>
std::vector<Tensor<T>> Transformer<T>::positional_tensors() const {
  std::vector<Tensor<T>> out;
  if (global_table_.defined()) out.push_back(global_table_);
  if (sinusoid_.defined()) out.push_back(sinusoid_);
  for (const auto& b : blocks_) {
    if (b.rel.defined()) {
      out.push_back(b.rel);
      out.push_back(b.u);
      out.push_back(b.v);
    }
  }
  return out;
}

template Tensor<float> sinusoidal_table<float>(std::size_t, std::size_t);
template Tensor<double> sinusoidal_table<double>(std::size_t, std::size_t);
template Tensor<float> causal_mask<float>(std::size_t);
template Tensor<double> causal_mask<double>(std::size_t);
template Tensor<float> relative_attention_scores(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                                 const Tensor<float>&, const Tensor<float>&);
template Tensor<double> relative_attention_scores(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                                  const Tensor<double>&, const Tensor<double>&);
template struct Block<float>;
template struct Block<double>;
template class Transformer<float>;
template class Transformer<double>;

}  // namespace plex::nn
