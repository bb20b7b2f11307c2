#include "adt/dtmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "adt/error.hpp"
#include "adt/rng.hpp"
#include "adt/simd.hpp"

namespace adt {

void DTConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0)
    throw ValidationError("d_model must be a positive multiple of n_heads");
  if (n_layers == 0) throw ValidationError("n_layers must be >= 1");
  if (K == 0) throw ValidationError("K must be >= 1");
  if (n_actions < 2) throw ValidationError("n_actions must be >= 2");
  if (d_state == 0) throw ValidationError("d_state must be >= 1");
  if (max_timestep == 0) throw ValidationError("max_timestep must be >= 1");
  if (!(dropout >= 0 && dropout < 1)) throw ValidationError("dropout must be in [0, 1)");
  if (!(return_scale > 0) || !std::isfinite(return_scale)) throw ValidationError("return_scale must be positive");
}

ParamLayout::ParamLayout(const DTConfig& cfg) {
  const std::size_t d = cfg.d_model, f = cfg.d_ff();
  w_ret = add("embed_return.weight", {1, d}, false);
  b_ret = add("embed_return.bias", {d}, false);
  w_state = add("embed_state.weight", {cfg.d_state, d}, true);
  b_state = add("embed_state.bias", {d}, false);
  e_action = add("embed_action.weight", {cfg.n_actions + 1, d}, false);
  e_time = add("embed_timestep.weight", {cfg.max_timestep, d}, false);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(p + "ln1.gain", {d}, false);
    b.ln1_b = add(p + "ln1.bias", {d}, false);
    b.wq = add(p + "attn.query.weight", {d, d}, true);
    b.bq = add(p + "attn.query.bias", {d}, false);
    b.wk = add(p + "attn.key.weight", {d, d}, true);
    b.bk = add(p + "attn.key.bias", {d}, false);
    b.wv = add(p + "attn.value.weight", {d, d}, true);
    b.bv = add(p + "attn.value.bias", {d}, false);
    b.wo = add(p + "attn.out.weight", {d, d}, true);
    b.bo = add(p + "attn.out.bias", {d}, false);
    b.ln2_g = add(p + "ln2.gain", {d}, false);
    b.ln2_b = add(p + "ln2.bias", {d}, false);
    b.w_fc = add(p + "mlp.fc.weight", {d, f}, true);
    b.b_fc = add(p + "mlp.fc.bias", {f}, false);
    b.w_proj = add(p + "mlp.proj.weight", {f, d}, true);
    b.b_proj = add(p + "mlp.proj.bias", {d}, false);
    blocks.push_back(b);
  }
  lnf_g = add("ln_f.gain", {d}, false);
  lnf_b = add("ln_f.bias", {d}, false);
  w_head = add("head.weight", {d, cfg.n_actions}, true);
  b_head = add("head.bias", {cfg.n_actions}, false);
}

std::size_t ParamLayout::add(std::string name, std::vector<std::size_t> shape, bool decay) {
  std::size_t size = 1;
  for (auto s : shape) size *= s;
  const std::size_t offset = total_;
  by_name_.emplace(name, specs_.size());
  specs_.push_back({std::move(name), std::move(shape), offset, size, decay});
  total_ += size;
  return offset;
}

const TensorSpec& ParamLayout::spec(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) throw NotFoundError("no tensor named '" + std::string(name) + "'");
  return specs_[it->second];
}

namespace {

constexpr double kLnEps = 1e-5;

template <typename T>
void layer_norm(const T* x, std::size_t rows, std::size_t d, const T* g, const T* b, T* out, T* mean, T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(d);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    mean[r] = mu;
    rstd[r] = rs;
    T* o = out + r * d;
    for (std::size_t j = 0; j < d; ++j) o[j] = (xr[j] - mu) * rs * g[j] + b[j];
  }
}

// Accumulates into dx, dg, db.
template <typename T>
void layer_norm_backward(const T* dy, const T* x, std::size_t rows, std::size_t d, const T* g, const T* mean,
                         const T* rstd, T* dx, T* dg, T* db) {
  std::vector<T> xhat(d), dxhat(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy + r * d;
    bool any = false;
    for (std::size_t j = 0; j < d; ++j) any |= dyr[j] != T(0);
    if (!any) continue;
    const T* xr = x + r * d;
    T m1 = 0, m2 = 0;
    for (std::size_t j = 0; j < d; ++j) {
      xhat[j] = (xr[j] - mean[r]) * rstd[r];
      dg[j] += dyr[j] * xhat[j];
      db[j] += dyr[j];
      dxhat[j] = dyr[j] * g[j];
      m1 += dxhat[j];
      m2 += dxhat[j] * xhat[j];
    }
    m1 /= static_cast<T>(d);
    m2 /= static_cast<T>(d);
    T* dxr = dx + r * d;
    for (std::size_t j = 0; j < d; ++j) dxr[j] += rstd[r] * (dxhat[j] - m1 - xhat[j] * m2);
  }
}

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * static_cast<T>(M_SQRT1_2)));
  const T pdf = std::exp(T(-0.5) * x * x) * static_cast<T>(0.5 * M_2_SQRTPI * M_SQRT1_2);
  return cdf + x * pdf;
}

// out[rows x n] = bias broadcast + in[rows x k] * w[k x n]
template <typename T>
void linear(const T* in, std::size_t rows, std::size_t k, const T* w, const T* bias, std::size_t n, T* out) {
  for (std::size_t r = 0; r < rows; ++r) std::copy(bias, bias + n, out + r * n);
  simd::gemm_nn(in, w, out, rows, k, n);
}

// dW += in^T dy, db += colsum(dy), din += dy W^T (when din != nullptr).
template <typename T>
void linear_backward(const T* in, std::size_t rows, std::size_t k, const T* w, std::size_t n, const T* dy, T* dw,
                     T* db, T* din) {
  simd::gemm_tn(in, dy, dw, k, rows, n);
  for (std::size_t r = 0; r < rows; ++r) simd::kernels<T>().axpy(T(1), dy + r * n, db, n);
  if (din) simd::gemm_nt(dy, w, din, rows, n, k);
}

template <typename T>
void make_dropout(Rng& rng, double p, std::size_t n, std::vector<T>& mask) {
  mask.resize(n);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep;
}

template <typename T>
void apply_mask(T* x, const std::vector<T>& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i) x[i] *= mask[i];
}

}  // namespace

bool is_target(const TrainingWindow& w, std::size_t t, std::size_t n_actions) {
  return w.pad_mask[t] != 0 && w.actions[t] < n_actions;
}

std::size_t count_targets(std::span<const TrainingWindow> batch, std::size_t n_actions) {
  std::size_t n = 0;
  for (const auto& w : batch)
    for (std::size_t t = 0; t < w.K; ++t) n += is_target(w, t, n_actions);
  return n;
}

template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename T>
DecisionTransformer<T>::DecisionTransformer(const DTConfig& cfg)
    : cfg_((cfg.validate(), cfg)), layout_(cfg), params_(layout_.total(), T(0)) {}

template <typename T>
DecisionTransformer<T> DecisionTransformer<T>::init(const DTConfig& cfg, std::uint64_t seed) {
  DecisionTransformer m(cfg);
  Rng rng(seed);
  for (const auto& s : m.layout_.specs()) {
    T* p = m.params_.data() + s.offset;
    const bool is_gain = s.name.ends_with(".gain");
    const bool is_bias = s.name.ends_with(".bias");
    for (std::size_t i = 0; i < s.size; ++i) {
      if (is_gain) {
        p[i] = T(1);
      } else if (is_bias) {
        p[i] = T(0);
      } else {
        double z;
        do {
          z = rng.normal();
        } while (std::abs(z) >= 2.0);
        p[i] = static_cast<T>(0.02 * z);
      }
    }
  }
  return m;
}

template <typename T>
std::span<const T> DecisionTransformer<T>::tensor(std::string_view name) const {
  const auto& s = layout_.spec(name);
  return {params_.data() + s.offset, s.size};
}

template <typename T>
std::span<T> DecisionTransformer<T>::tensor(std::string_view name) {
  const auto& s = layout_.spec(name);
  return {params_.data() + s.offset, s.size};
}

template <typename T>
void DecisionTransformer<T>::forward_window(const TrainingWindow& w, bool train_mode, Rng* rng,
                                            WindowCache<T>& c, T* logits, T* final_attention) const {
  const std::size_t K = cfg_.K, L = 3 * K, d = cfg_.d_model, H = cfg_.n_heads, dh = d / H, F = cfg_.d_ff(),
                    A = cfg_.n_actions, ds = cfg_.d_state;
  const T* P = params_.data();
  const auto& lay = layout_;
  const bool drop = train_mode && cfg_.dropout > 0;

  std::vector<T> x(L * d);
  c.real_token.assign(L, 0);
  std::vector<T> state_in(ds);
  for (std::size_t t = 0; t < K; ++t) {
    const std::size_t ts = std::min<std::size_t>(w.timesteps[t], cfg_.max_timestep - 1);
    const T* te = P + lay.e_time + ts * d;
    T* xr = x.data() + (3 * t) * d;
    T* xs = xr + d;
    T* xa = xs + d;
    const T rtg = static_cast<T>(w.returns_to_go[t]);
    for (std::size_t j = 0; j < d; ++j) xr[j] = rtg * P[lay.w_ret + j] + P[lay.b_ret + j] + te[j];
    for (std::size_t j = 0; j < ds; ++j) state_in[j] = static_cast<T>(w.states[t * ds + j]);
    for (std::size_t j = 0; j < d; ++j) xs[j] = P[lay.b_state + j] + te[j];
    simd::gemm_nn(state_in.data(), P + lay.w_state, xs, 1, ds, d);
    if (w.actions[t] > A) throw ValidationError("action id out of range");
    const T* ae = P + lay.e_action + static_cast<std::size_t>(w.actions[t]) * d;
    for (std::size_t j = 0; j < d; ++j) xa[j] = ae[j] + te[j];
    for (std::size_t m = 0; m < 3; ++m) c.real_token[3 * t + m] = w.pad_mask[t];
  }
  if (drop) {
    make_dropout(*rng, cfg_.dropout, L * d, c.drop0);
    apply_mask(x.data(), c.drop0);
  } else {
    c.drop0.clear();
  }

  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> qh(L * dh), kh(L * dh), vh(L * dh), oh(L * dh), scores(L * L), proj(L * d), out(L * d);
  c.layers.resize(cfg_.n_layers);
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const auto& b = lay.blocks[l];
    auto& lc = c.layers[l];
    lc.x_in = x;
    lc.ln1.resize(L * d);
    lc.ln1_mean.resize(L);
    lc.ln1_rstd.resize(L);
    layer_norm(x.data(), L, d, P + b.ln1_g, P + b.ln1_b, lc.ln1.data(), lc.ln1_mean.data(), lc.ln1_rstd.data());
    lc.q.resize(L * d);
    lc.k.resize(L * d);
    lc.v.resize(L * d);
    linear(lc.ln1.data(), L, d, P + b.wq, P + b.bq, d, lc.q.data());
    linear(lc.ln1.data(), L, d, P + b.wk, P + b.bk, d, lc.k.data());
    linear(lc.ln1.data(), L, d, P + b.wv, P + b.bv, d, lc.v.data());

    lc.probs.assign(H * L * L, T(0));
    lc.attn.assign(L * d, T(0));
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t i = 0; i < L; ++i) {
        std::copy_n(lc.q.data() + i * d + h * dh, dh, qh.data() + i * dh);
        std::copy_n(lc.k.data() + i * d + h * dh, dh, kh.data() + i * dh);
        std::copy_n(lc.v.data() + i * d + h * dh, dh, vh.data() + i * dh);
      }
      std::fill(scores.begin(), scores.end(), T(0));
      simd::gemm_nt(qh.data(), kh.data(), scores.data(), L, dh, L);
      T* pr = lc.probs.data() + h * L * L;
      for (std::size_t i = 0; i < L; ++i) {
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j)
          if (c.real_token[j]) mx = std::max(mx, scores[i * L + j] * scale);
        if (mx == -std::numeric_limits<T>::infinity()) continue;  // no visible key
        T sum = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          if (!c.real_token[j]) continue;
          const T e = std::exp(scores[i * L + j] * scale - mx);
          pr[i * L + j] = e;
          sum += e;
        }
        const T inv = T(1) / sum;
        for (std::size_t j = 0; j <= i; ++j) pr[i * L + j] *= inv;
      }
      std::fill(oh.begin(), oh.end(), T(0));
      simd::gemm_nn(pr, vh.data(), oh.data(), L, L, dh);
      for (std::size_t i = 0; i < L; ++i) std::copy_n(oh.data() + i * dh, dh, lc.attn.data() + i * d + h * dh);
    }
    linear(lc.attn.data(), L, d, P + b.wo, P + b.bo, d, proj.data());
    if (drop) {
      make_dropout(*rng, cfg_.dropout, L * d, lc.drop1);
      apply_mask(proj.data(), lc.drop1);
    } else {
      lc.drop1.clear();
    }
    for (std::size_t i = 0; i < L * d; ++i) x[i] += proj[i];
    lc.x_mid = x;

    lc.ln2.resize(L * d);
    lc.ln2_mean.resize(L);
    lc.ln2_rstd.resize(L);
    layer_norm(x.data(), L, d, P + b.ln2_g, P + b.ln2_b, lc.ln2.data(), lc.ln2_mean.data(), lc.ln2_rstd.data());
    lc.h_pre.resize(L * F);
    lc.h_act.resize(L * F);
    linear(lc.ln2.data(), L, d, P + b.w_fc, P + b.b_fc, F, lc.h_pre.data());
    for (std::size_t i = 0; i < L * F; ++i) lc.h_act[i] = gelu(lc.h_pre[i]);
    linear(lc.h_act.data(), L, F, P + b.w_proj, P + b.b_proj, d, out.data());
    if (drop) {
      make_dropout(*rng, cfg_.dropout, L * d, lc.drop2);
      apply_mask(out.data(), lc.drop2);
    } else {
      lc.drop2.clear();
    }
    for (std::size_t i = 0; i < L * d; ++i) x[i] += out[i];
  }
  c.x_out = x;
  c.lnf.resize(L * d);
  c.lnf_mean.resize(L);
  c.lnf_rstd.resize(L);
  layer_norm(x.data(), L, d, P + lay.lnf_g, P + lay.lnf_b, c.lnf.data(), c.lnf_mean.data(), c.lnf_rstd.data());
  for (std::size_t t = 0; t < K; ++t)
    linear(c.lnf.data() + (3 * t + 1) * d, 1, d, P + lay.w_head, P + lay.b_head, A, logits + t * A);
  const auto& last = c.layers.back().probs;
  std::copy(last.begin(), last.end(), final_attention);
}

template <typename T>
ForwardTrace<T> DecisionTransformer<T>::forward(std::span<const TrainingWindow> batch, bool train_mode,
                                                std::uint64_t seed) const {
  const std::size_t K = cfg_.K, L = 3 * K, A = cfg_.n_actions, H = cfg_.n_heads;
  for (const auto& w : batch) {
    if (w.K != K || w.returns_to_go.size() != K || w.actions.size() != K || w.timesteps.size() != K ||
        w.pad_mask.size() != K)
      throw ValidationError("window context length " + std::to_string(w.K) + " does not match model K " +
                            std::to_string(K));
    if (w.d_state != cfg_.d_state || w.states.size() != K * cfg_.d_state)
      throw ValidationError("window state dimension " + std::to_string(w.d_state) + " does not match model " +
                            std::to_string(cfg_.d_state));
  }
  ForwardTrace<T> tr;
  tr.batch = batch.size();
  tr.K = K;
  tr.n_actions = A;
  tr.n_heads = H;
  tr.train_mode = train_mode;
  tr.action_logits.assign(batch.size() * K * A, T(0));
  tr.final_attention.assign(batch.size() * H * L * L, T(0));
  tr.caches.resize(batch.size());
  Rng rng(seed);
  for (std::size_t b = 0; b < batch.size(); ++b)
    forward_window(batch[b], train_mode, &rng, tr.caches[b], tr.action_logits.data() + b * K * A,
                   tr.final_attention.data() + b * H * L * L);
  return tr;
}

template <typename T>
Gradients<T> DecisionTransformer<T>::backward(const ForwardTrace<T>& tr, std::span<const TrainingWindow> batch) const {
  const std::size_t K = cfg_.K, L = 3 * K, d = cfg_.d_model, H = cfg_.n_heads, dh = d / H, F = cfg_.d_ff(),
                    A = cfg_.n_actions, ds = cfg_.d_state;
  if (tr.batch != batch.size() || tr.caches.size() != batch.size())
    throw ValidationError("trace does not match batch");
  const std::size_t n_targets = count_targets(batch, A);
  if (n_targets == 0) throw ValidationError("batch has no target positions");
  const T inv_n = T(1) / static_cast<T>(n_targets);
  const T* P = params_.data();
  const auto& lay = layout_;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));

  Gradients<T> g;
  g.params.assign(params_.size(), T(0));
  g.states.assign(batch.size(), std::vector<T>(K * ds, T(0)));
  T* G = g.params.data();

  std::vector<T> dx(L * d), dtmp(L * d), dproj(L * d), dh_buf(L * F), dqkv(3 * L * d), dlog(A);
  std::vector<T> qh(L * dh), kh(L * dh), vh(L * dh), doh(L * dh), dqh(L * dh), dkh(L * dh), dvh(L * dh), dp(L * L);

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& w = batch[b];
    const auto& c = tr.caches[b];
    std::fill(dtmp.begin(), dtmp.end(), T(0));
    for (std::size_t t = 0; t < K; ++t) {
      if (!is_target(w, t, A)) continue;
      const auto lg = tr.logits(b, t);
      const T mx = *std::max_element(lg.begin(), lg.end());
      T sum = 0;
      for (std::size_t a = 0; a < A; ++a) sum += std::exp(lg[a] - mx);
      for (std::size_t a = 0; a < A; ++a) dlog[a] = std::exp(lg[a] - mx) / sum * inv_n;
      dlog[w.actions[t]] -= inv_n;
      const std::size_t row = 3 * t + 1;
      linear_backward(c.lnf.data() + row * d, 1, d, P + lay.w_head, A, dlog.data(), G + lay.w_head, G + lay.b_head,
                      dtmp.data() + row * d);
    }
    std::fill(dx.begin(), dx.end(), T(0));
    layer_norm_backward(dtmp.data(), c.x_out.data(), L, d, P + lay.lnf_g, c.lnf_mean.data(), c.lnf_rstd.data(),
                        dx.data(), G + lay.lnf_g, G + lay.lnf_b);

    for (std::size_t l = cfg_.n_layers; l-- > 0;) {
      const auto& bl = lay.blocks[l];
      const auto& lc = c.layers[l];
      // MLP branch.
      dproj = dx;
      if (!lc.drop2.empty()) apply_mask(dproj.data(), lc.drop2);
      std::fill(dh_buf.begin(), dh_buf.end(), T(0));
      linear_backward(lc.h_act.data(), L, F, P + bl.w_proj, d, dproj.data(), G + bl.w_proj, G + bl.b_proj,
                      dh_buf.data());
      for (std::size_t i = 0; i < L * F; ++i) dh_buf[i] *= gelu_grad(lc.h_pre[i]);
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      linear_backward(lc.ln2.data(), L, d, P + bl.w_fc, F, dh_buf.data(), G + bl.w_fc, G + bl.b_fc, dtmp.data());
      layer_norm_backward(dtmp.data(), lc.x_mid.data(), L, d, P + bl.ln2_g, lc.ln2_mean.data(), lc.ln2_rstd.data(),
                          dx.data(), G + bl.ln2_g, G + bl.ln2_b);

      // Attention branch.
      dproj = dx;
      if (!lc.drop1.empty()) apply_mask(dproj.data(), lc.drop1);
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      linear_backward(lc.attn.data(), L, d, P + bl.wo, d, dproj.data(), G + bl.wo, G + bl.bo, dtmp.data());
      T* dq = dqkv.data();
      T* dk = dq + L * d;
      T* dv = dk + L * d;
      std::fill(dqkv.begin(), dqkv.end(), T(0));
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < L; ++i) {
          std::copy_n(lc.q.data() + i * d + h * dh, dh, qh.data() + i * dh);
          std::copy_n(lc.k.data() + i * d + h * dh, dh, kh.data() + i * dh);
          std::copy_n(lc.v.data() + i * d + h * dh, dh, vh.data() + i * dh);
          std::copy_n(dtmp.data() + i * d + h * dh, dh, doh.data() + i * dh);
        }
        const T* pr = lc.probs.data() + h * L * L;
        std::fill(dp.begin(), dp.end(), T(0));
        simd::gemm_nt(doh.data(), vh.data(), dp.data(), L, dh, L);
        std::fill(dvh.begin(), dvh.end(), T(0));
        simd::gemm_tn(pr, doh.data(), dvh.data(), L, L, dh);
        // dp <- dS = P * (dP - rowsum(P * dP)) * scale; zero wherever P is.
        for (std::size_t i = 0; i < L; ++i) {
          T dot = 0;
          for (std::size_t j = 0; j <= i; ++j) dot += pr[i * L + j] * dp[i * L + j];
          for (std::size_t j = 0; j < L; ++j)
            dp[i * L + j] = pr[i * L + j] == T(0) ? T(0) : pr[i * L + j] * (dp[i * L + j] - dot) * scale;
        }
        std::fill(dqh.begin(), dqh.end(), T(0));
        std::fill(dkh.begin(), dkh.end(), T(0));
        simd::gemm_nn(dp.data(), kh.data(), dqh.data(), L, L, dh);
        simd::gemm_tn(dp.data(), qh.data(), dkh.data(), L, L, dh);
        for (std::size_t i = 0; i < L; ++i) {
          std::copy_n(dqh.data() + i * dh, dh, dq + i * d + h * dh);
          std::copy_n(dkh.data() + i * dh, dh, dk + i * d + h * dh);
          std::copy_n(dvh.data() + i * dh, dh, dv + i * d + h * dh);
        }
      }
      std::fill(dtmp.begin(), dtmp.end(), T(0));
      linear_backward(lc.ln1.data(), L, d, P + bl.wq, d, dq, G + bl.wq, G + bl.bq, dtmp.data());
      linear_backward(lc.ln1.data(), L, d, P + bl.wk, d, dk, G + bl.wk, G + bl.bk, dtmp.data());
      linear_backward(lc.ln1.data(), L, d, P + bl.wv, d, dv, G + bl.wv, G + bl.bv, dtmp.data());
      layer_norm_backward(dtmp.data(), lc.x_in.data(), L, d, P + bl.ln1_g, lc.ln1_mean.data(), lc.ln1_rstd.data(),
                          dx.data(), G + bl.ln1_g, G + bl.ln1_b);
    }

    if (!c.drop0.empty()) apply_mask(dx.data(), c.drop0);
    std::vector<T> state_in(ds);
    for (std::size_t t = 0; t < K; ++t) {
      const std::size_t ts = std::min<std::size_t>(w.timesteps[t], cfg_.max_timestep - 1);
      const T* dr = dx.data() + (3 * t) * d;
      const T* dsv = dr + d;
      const T* da = dsv + d;
      T* gte = G + lay.e_time + ts * d;
      const T rtg = static_cast<T>(w.returns_to_go[t]);
      for (std::size_t j = 0; j < d; ++j) {
        gte[j] += dr[j] + dsv[j] + da[j];
        G[lay.w_ret + j] += rtg * dr[j];
        G[lay.b_ret + j] += dr[j];
      }
      for (std::size_t j = 0; j < ds; ++j) state_in[j] = static_cast<T>(w.states[t * ds + j]);
      linear_backward(state_in.data(), 1, ds, P + lay.w_state, d, dsv, G + lay.w_state, G + lay.b_state,
                      g.states[b].data() + t * ds);
      simd::kernels<T>().axpy(T(1), da, G + lay.e_action + static_cast<std::size_t>(w.actions[t]) * d, d);
    }
  }
  return g;
}

template <typename T>
T loss(const ForwardTrace<T>& trace, std::span<const TrainingWindow> batch) {
  const std::size_t A = trace.n_actions;
  T total = 0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 0; t < trace.K; ++t) {
      if (!is_target(batch[b], t, A)) continue;
      const auto lg = trace.logits(b, t);
      const T mx = *std::max_element(lg.begin(), lg.end());
      T sum = 0;
      for (T v : lg) sum += std::exp(v - mx);
      total += std::log(sum) + mx - lg[batch[b].actions[t]];
      ++n;
    }
  }
  if (n == 0) throw ValidationError("batch has no target positions");
  return total / static_cast<T>(n);
}

template <typename T>
double accuracy(const ForwardTrace<T>& trace, std::span<const TrainingWindow> batch) {
  std::size_t n = 0, hit = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t t = 0; t < trace.K; ++t) {
      if (!is_target(batch[b], t, trace.n_actions)) continue;
      ++n;
      hit += argmax(trace.logits(b, t)) == batch[b].actions[t];
    }
  }
  return n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
}

template class DecisionTransformer<float>;
template class DecisionTransformer<double>;
template float loss(const ForwardTrace<float>&, std::span<const TrainingWindow>);
template double loss(const ForwardTrace<double>&, std::span<const TrainingWindow>);
template double accuracy(const ForwardTrace<float>&, std::span<const TrainingWindow>);
template double accuracy(const ForwardTrace<double>&, std::span<const TrainingWindow>);
template std::size_t argmax(std::span<const float>);
template std::size_t argmax(std::span<const double>);

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[5] = {'A', 'D', 'T', 'C', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  bool done() const { return pos_ == data_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw ParseError("checkpoint truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::map<std::string, std::string> config_entries(const DTConfig& c) {
  return {{"d_model", std::to_string(c.d_model)},
          {"n_layers", std::to_string(c.n_layers)},
          {"n_heads", std::to_string(c.n_heads)},
          {"K", std::to_string(c.K)},
          {"n_actions", std::to_string(c.n_actions)},
          {"d_state", std::to_string(c.d_state)},
          {"max_timestep", std::to_string(c.max_timestep)},
          {"dropout", fmt_double(c.dropout)},
          {"return_scale", fmt_double(c.return_scale)}};
}

}  // namespace

void save_checkpoint(const DecisionTransformer<float>& model, const std::map<std::string, std::string>& metadata,
                     const std::filesystem::path& path) {
  auto entries = config_entries(model.config());
  for (const auto& [k, v] : metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ValidationError("metadata key/value may not contain '=' or newlines: " + k);
    if (!entries.count(k)) entries.emplace(k, v);
  }
  std::string meta;
  for (const auto& [k, v] : entries) meta += k + "=" + v + "\n";

  std::string out(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  const auto params = model.params();
  for (const auto& s : model.layout().specs()) {
    put_u32(out, static_cast<std::uint32_t>(s.name.size()));
    out += s.name;
    put_u32(out, static_cast<std::uint32_t>(s.shape.size()));
    for (auto dim : s.shape) put_u32(out, static_cast<std::uint32_t>(dim));
    for (std::size_t i = 0; i < s.size; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &params[s.offset + i], 4);
      put_u32(out, bits);
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str());
  if (r.bytes(sizeof kMagic) != std::string(kMagic, sizeof kMagic))
    throw ParseError("bad checkpoint magic (expected ADTC1)");
  const std::string meta = r.bytes(r.u32());
  std::map<std::string, std::string> kv;
  std::istringstream ms(meta);
  std::string line;
  while (std::getline(ms, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("bad metadata line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto take = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) throw ParseError("checkpoint metadata missing '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  DTConfig cfg;
  try {
    cfg.d_model = std::stoul(take("d_model"));
    cfg.n_layers = std::stoul(take("n_layers"));
    cfg.n_heads = std::stoul(take("n_heads"));
    cfg.K = std::stoul(take("K"));
    cfg.n_actions = std::stoul(take("n_actions"));
    cfg.d_state = std::stoul(take("d_state"));
    cfg.max_timestep = std::stoul(take("max_timestep"));
    cfg.dropout = std::strtod(take("dropout").c_str(), nullptr);
    cfg.return_scale = std::strtod(take("return_scale").c_str(), nullptr);
  } catch (const std::logic_error&) {
    throw ParseError("malformed checkpoint config value");
  }
  Checkpoint ck{DecisionTransformer<float>(cfg), std::move(kv)};
  auto params = ck.model.params();
  std::vector<bool> seen(ck.model.layout().specs().size(), false);
  while (!r.done()) {
    const std::string name = r.bytes(r.u32());
    if (!ck.model.layout().contains(name)) throw ParseError("unknown tensor '" + name + "'");
    const auto& spec = ck.model.layout().spec(name);
    const std::size_t idx = static_cast<std::size_t>(&spec - ck.model.layout().specs().data());
    if (seen[idx]) throw ParseError("duplicate tensor '" + name + "'");
    seen[idx] = true;
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
    if (shape != spec.shape) throw ParseError("shape mismatch for tensor '" + name + "'");
    for (std::size_t i = 0; i < spec.size; ++i) params[spec.offset + i] = r.f32();
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ParseError("checkpoint missing tensor '" + ck.model.layout().specs()[i].name + "'");
  return ck;
}

}  // namespace adt
