#include "harmony/objectives.hpp"

#include <algorithm>

namespace harmony::objectives {

namespace {

using Grads = std::span<Tensor* const>;

void check_pair(const Var& pred, const Var& target, const char* op) {
  if (!pred.tape() || pred.tape() != target.tape()) {
    throw ContractError(std::string(op) + ": operands must share one tape");
  }
  const Shape& p = pred.shape();
  const Shape& t = target.shape();
  if (p == t) return;
  const std::string ctx = std::string(op) + ": pred " + p.str() + " vs target " + t.str();
  if (p.n != t.n) throw DimensionError("batch", ctx);
  if (p.c != t.c) throw DimensionError("channels", ctx);
  if (p.h != t.h) throw DimensionError("height", ctx);
  throw DimensionError("width", ctx);
}

// Adds scale[n] * (pred - target) into the gradients of pred and target.
ad::Tape::BackwardFn difference_backward(const Tensor& pred, const Tensor& target,
                                     std::vector<Real> scale) {
  return [&pred, &target, scale = std::move(scale)](const Tensor&, const Tensor& g,
                                                    Grads d) {
    const Shape& s = pred.shape();
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    for (int n = 0; n < s.n; ++n) {
      const Real k = g[0] * scale[n];
      const std::size_t base = n * per;
      if (d[0]) {
        Real* dp = d[0]->ptr() + base;
        for (std::size_t i = 0; i < per; ++i) dp[i] += k * (pred[base + i] - target[base + i]);
      }
      if (d[1]) {
        Real* dt = d[1]->ptr() + base;
        for (std::size_t i = 0; i < per; ++i) dt[i] -= k * (pred[base + i] - target[base + i]);
      }
    }
  };
}

}  // namespace

std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "fn_mse"; }

LossKind loss_from_string(std::string_view s) {
  if (s == "mse") return LossKind::mse;
  if (s == "fn_mse") return LossKind::fn_mse;
  throw ValidationError("unknown loss '" + std::string(s) + "' (expected mse or fn_mse)");
}

void LossConfig::validate() const {
  if (!(a_min > 0)) throw ValidationError("loss a_min must be > 0");
}

Var fn_mse(const Var& pred, const Var& target, const Tensor& mask, Real a_min) {
  check_pair(pred, target, "fn_mse");
  if (!(a_min > 0)) throw ValidationError("fn_mse: a_min must be > 0");
  const Shape& s = pred.shape();
  const Shape& ms = mask.shape();
  if (ms.n != s.n || ms.c != 1 || ms.h != s.h || ms.w != s.w) {
    throw DimensionError(ms.n != s.n ? "batch" : ms.c != 1 ? "channels" : "height",
                         "fn_mse: mask " + ms.str() + " vs pred " + s.str());
  }
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
  std::vector<Real> scale(s.n);
  Real total = 0;
  for (int n = 0; n < s.n; ++n) {
    Real area = 0;
    const Real* m = mask.plane(n, 0);
    for (std::size_t i = 0; i < s.plane(); ++i) {
      if (!(m[i] >= 0 && m[i] <= 1)) {
        throw ValidationError("fn_mse: mask values must lie in [0, 1]");
      }
      area += m[i];
    }
    Real sq = 0;
    for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
      const Real d = p[i] - t[i];
      sq += d * d;
    }
    const Real denom = std::max(a_min, area);
    total += sq / denom;
    scale[n] = 2 / (denom * s.n);
  }
  return pred.tape()->record(Tensor(Shape{}, total / s.n), {pred, target},
                             difference_backward(p, t, std::move(scale)));
}

Var mse_loss(const Var& pred, const Var& target) {
  check_pair(pred, target, "mse_loss");
  const Tensor& p = pred.value();
  const Tensor& t = target.value();
  Real sq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Real d = p[i] - t[i];
    sq += d * d;
  }
  const Real count = static_cast<Real>(p.size());
  return pred.tape()->record(
      Tensor(Shape{}, sq / count), {pred, target},
      difference_backward(p, t, std::vector<Real>(pred.shape().n, 2 / count)));
}

Var loss(const LossConfig& config, const Var& pred, const Var& target,
         const Tensor& mask) {
  config.validate();
  if (config.kind == LossKind::mse) return mse_loss(pred, target);
  return fn_mse(pred, target, mask, config.a_min);
}

}  // namespace harmony::objectives
