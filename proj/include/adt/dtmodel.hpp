#pragma once
// Decision Transformer over (return-to-go, state, action) token triples with
// causal pre-norm attention blocks and hand-written backpropagation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "adt/trajectory.hpp"

namespace adt {

class Rng;

struct DTConfig {
  std::size_t d_model = 128;
  std::size_t n_layers = 3;
  std::size_t n_heads = 1;
  std::size_t K = 20;
  std::size_t n_actions = 8;
  std::size_t d_state = 64;
  std::size_t max_timestep = 1024;
  double dropout = 0.1;
  double return_scale = 1.0;

  void validate() const;
  std::size_t seq_len() const { return 3 * K; }
  std::size_t d_ff() const { return 4 * d_model; }
};

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool decay = false;  // linear-map weights get decoupled weight decay
};

// Offsets of every named tensor inside one flat parameter buffer.
class ParamLayout {
 public:
  struct Block {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  explicit ParamLayout(const DTConfig& cfg);

  std::size_t total() const noexcept { return total_; }
  const std::vector<TensorSpec>& specs() const noexcept { return specs_; }
  const TensorSpec& spec(std::string_view name) const;
  bool contains(std::string_view name) const { return by_name_.count(std::string(name)) != 0; }

  std::size_t w_ret, b_ret, w_state, b_state, e_action, e_time;
  std::vector<Block> blocks;
  std::size_t lnf_g, lnf_b, w_head, b_head;

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape, bool decay);

  std::vector<TensorSpec> specs_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::size_t total_ = 0;
};

template <typename T>
struct LayerCache {
  std::vector<T> x_in, ln1, ln1_mean, ln1_rstd, q, k, v, probs, attn, drop1, x_mid, ln2, ln2_mean, ln2_rstd, h_pre,
      h_act, drop2;
};

template <typename T>
struct WindowCache {
  std::vector<T> drop0;
  std::vector<LayerCache<T>> layers;
  std::vector<T> x_out, lnf, lnf_mean, lnf_rstd;
  std::vector<std::uint8_t> real_token;  // per token: belongs to a real step
};

template <typename T>
struct ForwardTrace {
  std::size_t batch = 0, K = 0, n_actions = 0, n_heads = 0;
  bool train_mode = false;
  std::vector<T> action_logits;    // batch x K x n_actions, read at state tokens
  std::vector<T> final_attention;  // batch x n_heads x 3K x 3K
  std::vector<WindowCache<T>> caches;

  std::span<const T> logits(std::size_t b, std::size_t t) const {
    return {action_logits.data() + (b * K + t) * n_actions, n_actions};
  }
  std::span<const T> attention_row(std::size_t b, std::size_t h, std::size_t query) const {
    const std::size_t L = 3 * K;
    return {final_attention.data() + ((b * n_heads + h) * L + query) * L, L};
  }
};

template <typename T>
struct Gradients {
  std::vector<T> params;               // same layout as the model parameters
  std::vector<std::vector<T>> states;  // per window, K x d_state input gradient
};

template <typename T>
class DecisionTransformer {
 public:
  explicit DecisionTransformer(const DTConfig& cfg);

  // Truncated normal (std 0.02, cut at 2 std) weights, zero biases, unit gains.
  static DecisionTransformer init(const DTConfig& cfg, std::uint64_t seed);

  const DTConfig& config() const noexcept { return cfg_; }
  DTConfig& mutable_config() noexcept { return cfg_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::span<T> params() noexcept { return params_; }
  std::span<const T> params() const noexcept { return params_; }
  std::span<const T> tensor(std::string_view name) const;
  std::span<T> tensor(std::string_view name);

  // Dropout is applied only when `train_mode`, with masks drawn from `seed`.
  ForwardTrace<T> forward(std::span<const TrainingWindow> batch, bool train_mode = false,
                          std::uint64_t seed = 0) const;
  // Gradient of loss(trace, batch) with respect to every parameter.
  Gradients<T> backward(const ForwardTrace<T>& trace, std::span<const TrainingWindow> batch) const;

  template <typename U>
  DecisionTransformer<U> cast() const {
    DecisionTransformer<U> out(cfg_);
    auto dst = out.params();
    for (std::size_t i = 0; i < params_.size(); ++i) dst[i] = static_cast<U>(params_[i]);
    return out;
  }

 private:
  void forward_window(const TrainingWindow& w, bool train_mode, Rng* rng, WindowCache<T>& cache,
                      T* logits, T* final_attention) const;

  DTConfig cfg_;
  ParamLayout layout_;
  std::vector<T> params_;
};

template <typename T>
DecisionTransformer<T> init_params(const DTConfig& cfg, std::uint64_t seed) {
  return DecisionTransformer<T>::init(cfg, seed);
}

// Positions that carry a prediction target: real slots with an observed action.
bool is_target(const TrainingWindow& w, std::size_t t, std::size_t n_actions);
std::size_t count_targets(std::span<const TrainingWindow> batch, std::size_t n_actions);

// Mean cross-entropy over target positions. Throws when there are none.
template <typename T>
T loss(const ForwardTrace<T>& trace, std::span<const TrainingWindow> batch);

// Fraction of target positions whose argmax logit is the true action.
template <typename T>
double accuracy(const ForwardTrace<T>& trace, std::span<const TrainingWindow> batch);

// Index of the largest value; ties go to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> v);

// Checkpoint: magic "ADTC1", u32 length-prefixed `key=value` metadata lines,
// then per tensor: u32 name length, name, u32 rank, u32 dims, f32 data (all
// little-endian).
struct Checkpoint {
  DecisionTransformer<float> model;
  std::map<std::string, std::string> metadata;  // extra keys beyond the config
};

void save_checkpoint(const DecisionTransformer<float>& model, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

extern template class DecisionTransformer<float>;
extern template class DecisionTransformer<double>;

}  // namespace adt
