#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ipf/autodiff.hpp"

namespace ipf::soft {

/// Smoothing constant shared by the abs and division blocks.
inline constexpr double kEps = 1e-7;

/// Latent vector: h differentiable channels, operated on element-wise.
using Latent = std::vector<ad::Value>;

inline void check_same_length(const Latent& a, const Latent& b, const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string(what) + ": latent length mismatch");
}

// ---- scalar blocks ----

/// b + softplus(a - b): smooth upper approximation of max(a, b).
/// Always >= the hard max; the gap peaks at ln 2 when a = b. The softplus
/// shift identity b + softplus(a-b) == a + softplus(b-a) lets us evaluate
/// from the larger operand, which keeps the bracketing exact in floating
/// point (larger + softplus(nonpositive) never rounds below the hard max).
inline ad::Value soft_max(ad::Value a, ad::Value b) {
  if (a.val() >= b.val()) return a + ad::softplus(b - a);
  return b + ad::softplus(a - b);
}

/// -soft_max(-a, -b): smooth lower approximation of min(a, b).
inline ad::Value soft_min(ad::Value a, ad::Value b) { return -soft_max(-a, -b); }

/// sqrt(a^2 + eps): differentiable at zero, exceeds |a| by at most sqrt(eps).
inline ad::Value smooth_abs(ad::Value a) {
  ad::Tape& t = *a.tape;
  return t.sqrt(a * a + kEps);
}

inline ad::Value soft_sign(ad::Value a) { return a.tape->tanh(a); }

/// a / (b + eps): never divides by zero.
inline ad::Value safe_div(ad::Value a, ad::Value b) { return a / (b + kEps); }

// ---- element-wise latent wrappers ----

inline Latent soft_max(const Latent& a, const Latent& b) {
  check_same_length(a, b, "soft_max");
  Latent out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) out.push_back(soft_max(a[i], b[i]));
  return out;
}

inline Latent soft_min(const Latent& a, const Latent& b) {
  check_same_length(a, b, "soft_min");
  Latent out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) out.push_back(soft_min(a[i], b[i]));
  return out;
}

inline Latent smooth_abs(const Latent& a) {
  Latent out;
  out.reserve(a.size());
  for (ad::Value v : a) out.push_back(smooth_abs(v));
  return out;
}

inline Latent soft_sign(const Latent& a) {
  Latent out;
  out.reserve(a.size());
  for (ad::Value v : a) out.push_back(soft_sign(v));
  return out;
}

inline Latent softplus(const Latent& a) {
  Latent out;
  out.reserve(a.size());
  for (ad::Value v : a) out.push_back(ad::softplus(v));
  return out;
}

inline Latent safe_div(const Latent& a, const Latent& b) {
  check_same_length(a, b, "safe_div");
  Latent out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) out.push_back(safe_div(a[i], b[i]));
  return out;
}

inline Latent add(const Latent& a, const Latent& b) {
  check_same_length(a, b, "add");
  Latent out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) out.push_back(a[i] + b[i]);
  return out;
}

inline Latent sub(const Latent& a, const Latent& b) {
  check_same_length(a, b, "sub");
  Latent out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) out.push_back(a[i] - b[i]);
  return out;
}

inline Latent mul(const Latent& a, const Latent& b) {
  check_same_length(a, b, "mul");
  Latent out;
  out.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) out.push_back(a[i] * b[i]);
  return out;
}

inline Latent scale(const Latent& a, double c) {
  Latent out;
  out.reserve(a.size());
  for (ad::Value v : a) out.push_back(v * c);
  return out;
}

inline Latent broadcast(ad::GraphBuilder& g, double v, int h) {
  Latent out;
  out.reserve(h);
  for (int i = 0; i < h; ++i) out.push_back(g.constant(v));
  return out;
}

/// Shift-by-max stabilized softmax over a vector of scalars. The shift is a
/// gradient-detached max (see Tape::cmax); softmax's shift invariance keeps
/// the gradient exact while exp never overflows.
inline std::vector<ad::Value> softmax(std::span<const ad::Value> x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  ad::Tape& t = *x[0].tape;
  ad::Value m = x[0];
  for (size_t i = 1; i < x.size(); ++i) m = t.cmax(m, x[i]);
  std::vector<ad::Value> e;
  e.reserve(x.size());
  for (ad::Value xi : x) e.push_back(t.exp(xi - m));
  ad::Value s = e[0];
  for (size_t i = 1; i < e.size(); ++i) s = s + e[i];
  std::vector<ad::Value> out;
  out.reserve(x.size());
  for (ad::Value ei : e) out.push_back(ei / s);
  return out;
}

/// Differentiable branch selection. The condition latents are concatenated,
/// mapped by the selector layer to one logit per branch, and softmaxed; the
/// output mixes the branches with those scalar weights (one weight per
/// branch, broadcast over all channels).
inline Latent soft_cond(std::span<const Latent> branches, std::span<const Latent> conditions,
                        const ad::DenseLayer& selector, ad::GraphBuilder& g) {
  if (branches.size() < 2) throw std::invalid_argument("soft_cond: need at least 2 branches");
  const size_t h = branches[0].size();
  for (const Latent& b : branches)
    if (b.size() != h) throw std::invalid_argument("soft_cond: branch length mismatch");
  std::vector<ad::Value> cond;
  for (const Latent& c : conditions) cond.insert(cond.end(), c.begin(), c.end());
  if (static_cast<int>(cond.size()) != selector.in)
    throw std::invalid_argument("soft_cond: selector input width mismatch");
  if (static_cast<int>(branches.size()) != selector.out)
    throw std::invalid_argument("soft_cond: selector output width mismatch");
  const std::vector<ad::Value> logits = selector.apply(g, cond);
  const std::vector<ad::Value> w = softmax(logits);
  Latent out;
  out.reserve(h);
  for (size_t j = 0; j < h; ++j) {
    ad::Value acc = branches[0][j] * w[0];
    for (size_t i = 1; i < branches.size(); ++i) acc = acc + branches[i][j] * w[i];
    out.push_back(acc);
  }
  return out;
}

}  // namespace ipf::soft
