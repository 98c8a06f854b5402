#include "plex/eval/diagnostics.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "plex/model/random_trajectory.hpp"
#include "plex/tensor/grad_check.hpp"
#include "plex/tensor/ops.hpp"

namespace plex::eval {

namespace ops = plex::tensor;
using tensor::Shape;
using Td = tensor::Tensor<double>;

namespace {

Td random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return Td::from(shape, std::move(v), true);
}

// Reduces an arbitrary output to a scalar with fixed random weights so every element matters.
class Reducer {
 public:
  explicit Reducer(std::uint64_t seed) : seed_(seed) {}
  Td operator()(const Td& y) const {
    Rng rng(seed_);
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    std::vector<double> w(y.numel());
    for (auto& x : w) x = dist(rng);
    return ops::sum(ops::mul(y, Td::from(y.shape(), std::move(w))));
  }

 private:
  std::uint64_t seed_;
};

GradCheckLine run(const std::string& name, const tensor::ScalarFn& f, std::vector<Td> params,
                  const std::vector<std::string>& names = {}) {
  const auto r = tensor::grad_check(f, params);
  GradCheckLine line{name, r.max_rel_error, ""};
  const std::string p = r.param < names.size() ? names[r.param] : "arg" + std::to_string(r.param);
  line.worst = p + "[" + std::to_string(r.element) + "]";
  return line;
}

}  // namespace

std::vector<GradCheckLine> op_gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  const Reducer red(seed + 1);
  std::vector<GradCheckLine> out;
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({3, 5}, rng);
  auto c = random_tensor({4, 3}, rng);
  auto row = random_tensor({3}, rng);
  auto d = random_tensor({4, 2}, rng);
  auto e = random_tensor({2, 3}, rng);
  // relu is checked away from its kink
  auto away = random_tensor({4, 3}, rng, 0.1, 1.0);
  for (std::size_t i = 0; i < away.numel(); i += 2) away.mutable_data()[i] *= -1.0;

  out.push_back(run("matmul", [&] { return red(ops::matmul(a, b)); }, {a, b}));
  out.push_back(run("transpose", [&] { return red(ops::transpose(a)); }, {a}));
  out.push_back(run("add", [&] { return red(ops::add(a, c)); }, {a, c}));
  out.push_back(run("sub", [&] { return red(ops::sub(a, c)); }, {a, c}));
  out.push_back(run("mul", [&] { return red(ops::mul(a, c)); }, {a, c}));
  out.push_back(run("scale", [&] { return red(ops::scale(a, 0.7)); }, {a}));
  out.push_back(run("add_row", [&] { return red(ops::add_row(a, row)); }, {a, row}));
  auto w = random_tensor({3, 5}, rng);
  auto bias = random_tensor({5}, rng);
  out.push_back(run("linear", [&] { return red(ops::linear(a, w, bias)); }, {a, w, bias}));
  out.push_back(run("relu", [&] { return red(ops::relu(away)); }, {away}));
  out.push_back(run("gelu", [&] { return red(ops::gelu(a)); }, {a}));
  out.push_back(run("tanh", [&] { return red(ops::tanh(a)); }, {a}));
  out.push_back(run("softmax(rows)", [&] { return red(ops::softmax(a, 1)); }, {a}));
  out.push_back(run("softmax(cols)", [&] { return red(ops::softmax(a, 0)); }, {a}));
  auto gamma = random_tensor({3}, rng, 0.5, 1.5);
  auto beta = random_tensor({3}, rng);
  out.push_back(run("layer_norm", [&] { return red(ops::layer_norm(a, gamma, beta, 1e-5)); }, {a, gamma, beta}));
  out.push_back(run("sum", [&] { return ops::sum(ops::mul(a, a)); }, {a}));
  out.push_back(run("sum_sq_error", [&] { return ops::sum_sq_error(a, c); }, {a, c}));
  out.push_back(run("reshape", [&] { return red(ops::reshape(a, {2, 6})); }, {a}));
  out.push_back(run("slice_rows", [&] { return red(ops::slice_rows(a, 1, 3)); }, {a}));
  out.push_back(run("slice_cols", [&] { return red(ops::slice_cols(a, 1, 3)); }, {a}));
  out.push_back(run("concat_rows", [&] { return red(ops::concat_rows<double>({a, row, e})); }, {a, row, e}));
  out.push_back(run("concat_cols", [&] { return red(ops::concat_cols<double>({a, d})); }, {a, d}));
  out.push_back(run("index_rows", [&] { return red(ops::index_rows(a, {3, 0, 3})); }, {a}));
  out.push_back(run("relative_gather", [&] { return red(ops::relative_gather(a)); }, {a}));
  auto x = random_tensor({2, 2, 5, 5}, rng);
  auto k = random_tensor({3, 2, 3, 3}, rng);
  auto kb = random_tensor({3}, rng);
  out.push_back(run("conv2d", [&] { return red(ops::conv2d(x, k, kb, 2, 1)); }, {x, k, kb}));
  out.push_back(run("dropout", [&] {
    Rng mask(seed + 2);
    return red(ops::dropout(a, 0.3, mask));
  }, {a}));
  return out;
}

std::vector<GradCheckLine> loss_gradient_checks(std::uint64_t seed) {
  model::PlexConfig cfg = model::PlexConfig::tiny();
  cfg.use_returns = true;
  const model::PlexModel<double> m(cfg, seed);
  const auto traj = model::random_trajectory(cfg, 4, seed + 1);

  auto split = [](const nn::ParamList<double>& ps) {
    std::vector<Td> tensors;
    std::vector<std::string> names;
    for (const auto& p : ps) {
      tensors.push_back(p.tensor);
      names.push_back(p.name);
    }
    return std::pair{tensors, names};
  };
  std::set<std::string> visual;
  for (const auto& p : m.visual_parameters()) visual.insert(p.name);
  nn::ParamList<double> non_visual;
  for (const auto& p : m.parameters()) {
    if (!visual.count(p.name)) non_visual.push_back(p);
  }

  std::vector<GradCheckLine> out;
  auto [pt, pn] = split(non_visual);
  out.push_back(run("planner_loss", [&] { return m.planner_loss(traj); }, pt, pn));
  auto [at, an] = split(m.parameters());
  out.push_back(run("executor_loss", [&] { return m.executor_loss(traj); }, at, an));
  out.push_back(run("bc_loss", [&] { return m.bc_loss(traj); }, at, an));
  return out;
}

}  // namespace plex::eval
