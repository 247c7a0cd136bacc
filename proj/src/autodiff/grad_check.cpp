#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "harmony/autodiff.hpp"

namespace harmony::ad {

Real relative_error(Real analytic, Real numeric) {
  const Real denom =
      std::max({std::abs(analytic), std::abs(numeric), Real{1e-8}});
  return std::abs(analytic - numeric) / denom;
}

namespace {

Real evaluate(const LossFn& loss) {
  Tape tape;
  const Var out = loss(tape);
  if (out.value().size() != 1) {
    throw ContractError("grad_check: loss must be a scalar");
  }
  return out.value()[0];
}

std::vector<std::size_t> pick_coords(std::size_t size, std::size_t max_coords,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (size <= max_coords) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_coords);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

Real grad_check_parameters(const LossFn& loss,
                           std::span<Parameter* const> params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    const Var out = loss(tape);
    tape.backward(out);
  }
  std::mt19937_64 rng(options.seed);
  const Real h = options.step;
  Real worst = 0;
  for (Parameter* p : params) {
    for (std::size_t i : pick_coords(p->value.size(), options.max_coords, rng)) {
      const Real orig = p->value[i];
      p->value[i] = orig + h;
      const Real up = evaluate(loss);
      p->value[i] = orig - h;
      const Real down = evaluate(loss);
      p->value[i] = orig;
      const Real numeric = (up - down) / (2 * h);
      worst = std::max(worst, relative_error(p->grad[i], numeric));
    }
  }
  return worst;
}

Real grad_check(const TensorFn& f, const std::vector<Tensor>& inputs,
                const GradCheckOptions& options) {
  std::vector<Parameter> params;
  params.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    params.emplace_back("input" + std::to_string(i), inputs[i]);
  }
  auto forward = [&](Tape& tape) {
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Parameter& p : params) vars.push_back(tape.watch(p));
    return f(tape, vars);
  };

  // Fixed projection of the output, drawn once from the seed.
  Tensor projection;
  {
    Tape tape;
    const Var out = forward(tape);
    projection = Tensor(out.shape(), 1.0);
    if (out.value().size() > 1) {
      std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
      std::uniform_real_distribution<Real> u(-1, 1);
      for (std::size_t i = 0; i < projection.size(); ++i) projection[i] = u(rng);
    }
    for (Parameter& p : params) p.zero_grad();
    tape.backward(sum(mul(out, tape.constant(projection))));
  }

  // Outputs are differenced element by element before projecting, so the
  // untouched elements contribute exact zeros instead of cancellation noise.
  auto output_of = [&]() {
    Tape tape;
    return forward(tape).value();
  };
  std::mt19937_64 rng(options.seed);
  const Real h = options.step;
  Real worst = 0;
  for (Parameter& p : params) {
    for (std::size_t i : pick_coords(p.value.size(), options.max_coords, rng)) {
      const Real orig = p.value[i];
      p.value[i] = orig + h;
      const Tensor up = output_of();
      p.value[i] = orig - h;
      const Tensor down = output_of();
      p.value[i] = orig;
      Real numeric = 0;
      for (std::size_t k = 0; k < up.size(); ++k) {
        numeric += projection[k] * ((up[k] - down[k]) / (2 * h));
      }
      worst = std::max(worst, relative_error(p.grad[i], numeric));
    }
  }
  return worst;
}

}  // namespace harmony::ad
