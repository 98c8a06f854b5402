#pragma once

#include <string>
#include <vector>

#include "plex/nn/layers.hpp"

namespace plex::nn {

enum class PosMode { absolute, global, relative };

std::string to_string(PosMode mode);
PosMode parse_pos_mode(const std::string& name);

struct TransformerConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t hidden = 32;
  // context size K in timesteps
  std::size_t context_steps = 10;
  PosMode pos_mode = PosMode::relative;
  // rows of the learned table in global mode
  std::size_t t_max = 128;
  double dropout = 0.1;

  void validate() const;
  std::size_t head_dim() const { return hidden / n_heads; }
};

// Sinusoidal table; row i holds (sin(i / 10000^(2j/h)), cos(...)) at dims (2j, 2j+1).
template <typename T>
Tensor<T> sinusoidal_table(std::size_t rows, std::size_t hidden);

// Additive causal mask: 0 on and below the diagonal, -1e30 above.
template <typename T>
Tensor<T> causal_mask(std::size_t n);

// Scaled, causally masked relative-position scores for one head:
// ((q_i + u) . k_j + (q_i + v) . r_{i-j}) / sqrt(d). q, k: [n x d]; rel: [>= n x d]; u, v: [d].
template <typename T>
Tensor<T> relative_attention_scores(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& rel,
                                    const Tensor<T>& u, const Tensor<T>& v);

template <typename T>
struct Block {
  LayerNorm<T> ln1;
  Linear<T> qkv;
  Linear<T> attn_proj;
  LayerNorm<T> ln2;
  Linear<T> fc;
  Linear<T> mlp_proj;
  // relative mode only: distance table [max_tokens x h], content bias u, position bias v
  Tensor<T> rel;
  Tensor<T> u;
  Tensor<T> v;

  void collect(const std::string& prefix, ParamList<T>& out) const;
};

// Where the tokens of one forward call sit in time.
struct TokenPositions {
  // Padding tokens elided ahead of row 0; absolute mode indexes from here.
  std::size_t pad = 0;
  // Absolute timestep per token, 0-based. Required in global mode.
  std::vector<std::size_t> timesteps;
};

template <typename T>
class Transformer {
 public:
  Transformer() = default;
  // max_tokens: longest token sequence a context can hold (K_tok).
  Transformer(const TransformerConfig& cfg, std::size_t max_tokens, Rng& rng);

  // tokens [n x h] -> [n x h]. Dropout is applied only when dropout_rng is given.
  Tensor<T> forward(const Tensor<T>& tokens, const TokenPositions& pos, Rng* dropout_rng = nullptr) const;

  // Learned row for an absolute timestep (global mode).
  Tensor<T> global_embedding(std::size_t t_abs) const;

  const TransformerConfig& config() const { return cfg_; }
  std::size_t max_tokens() const { return max_tokens_; }
  std::size_t n_layers() const { return blocks_.size(); }

  void collect(const std::string& prefix, ParamList<T>& out) const;
  void collect_block(std::size_t layer, const std::string& prefix, ParamList<T>& out) const;
  std::string block_prefix(const std::string& prefix, std::size_t layer) const;

  // Every tensor carrying position information, including the fixed sinusoid buffer.
  std::vector<Tensor<T>> positional_tensors() const;

 private:
  Tensor<T> attention(const Block<T>& b, const Tensor<T>& x, const Tensor<T>& mask) const;

  TransformerConfig cfg_;
  std::size_t max_tokens_ = 0;
  LayerNorm<T> ln_in_;
  std::vector<Block<T>> blocks_;
  LayerNorm<T> ln_f_;
  Tensor<T> global_table_;  // [t_max x h], global mode
  Tensor<T> sinusoid_;      // [max_tokens x h], absolute mode, not trained
};

}  // namespace plex::nn
