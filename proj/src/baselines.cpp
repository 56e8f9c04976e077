#include "protohail/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protohail/numerics.hpp"

namespace protohail {

std::vector<double> default_rate_grid(std::size_t points) {
  if (points < 2) throw ContractViolation("rate grid needs at least two points");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) g[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

bool lexicographically_better(const GridPoint& a, const GridPoint& b) {
  if (a.risk != b.risk) return a.risk < b.risk;
  if (a.benefit != b.benefit) return a.benefit > b.benefit;
  return a.rate > b.rate;
}

GridResult grid_search(std::span<const double> grid, const std::function<GridPoint(double)>& evaluate) {
  if (grid.empty()) throw ContractViolation("grid_search: empty grid");
  GridResult out;
  for (double r : grid) {
    if (!(r >= 0.0 && r <= 1.0)) throw ContractViolation("grid_search: rate outside [0,1]");
    GridPoint p = evaluate(r);
    p.rate = r;
    out.points.push_back(p);
    if (out.points.size() == 1 || lexicographically_better(p, out.best)) out.best = p;
  }
  return out;
}

ConstantController::ConstantController(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ContractViolation("constant rate outside [0,1]");
}

double moving_average(std::span<const double> history, std::size_t window) {
  if (window == 0) throw ContractViolation("moving_average: window must be >= 1");
  if (history.empty()) return 1.0;
  const std::size_t n = std::min(window, history.size());
  const double s = std::accumulate(history.end() - static_cast<std::ptrdiff_t>(n), history.end(), 0.0);
  return std::clamp(s / static_cast<double>(n), 0.0, 1.0);
}

MovingAverageController::MovingAverageController(std::size_t window, std::size_t feature, double multiplier)
    : window_(window), feature_(feature), multiplier_(multiplier) {
  if (window == 0) throw ContractViolation("moving average window must be >= 1");
}

void MovingAverageController::reset(std::size_t entities) { history_.assign(entities, {}); }

std::vector<double> MovingAverageController::act(std::span<const std::vector<double>> states) {
  std::vector<double> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    history_.at(i).push_back(states[i].at(feature_) * multiplier_);
    out[i] = moving_average(history_[i], window_);
  }
  return out;
}

BcModel BcModel::init(std::size_t state_width, std::size_t hidden, std::size_t width, std::uint64_t seed) {
  BcModel m;
  m.encoder = EncoderParams::init(state_width, hidden, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  auto uniform = [&](std::size_t r, std::size_t c, double bound) {
    std::uniform_real_distribution<double> d(-bound, bound);
    Tensor t(r, c);
    for (double& v : t.flat()) v = d(rng);
    return t;
  };
  m.w1 = uniform(hidden, width, 1.0 / std::sqrt(static_cast<double>(hidden)));
  m.b1 = Tensor(1, width);
  m.w2 = uniform(width, 1, 1.0 / std::sqrt(static_cast<double>(width)));
  m.b2 = Tensor(1, 1);
  return m;
}

std::vector<Tensor*> BcModel::parameters() {
  auto enc = encoder.tensors();
  return {enc[0], enc[1], enc[2], enc[3], &w1, &b1, &w2, &b2};
}

std::vector<const Tensor*> BcModel::parameters() const {
  auto enc = encoder.tensors();
  return {enc[0], enc[1], enc[2], enc[3], &w1, &b1, &w2, &b2};
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw ContractViolation("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

namespace {

ad::Var mlp(ad::Var h, std::span<const ad::Var> leaves) {
  ad::Var hidden = ad::tanh(ad::add(ad::matmul(h, leaves[4]), leaves[5]));
  return ad::sigmoid(ad::add(ad::matmul(hidden, leaves[6]), leaves[7]));
}

std::vector<double> mlp_values(const Tensor& h, const BcModel& model) {
  ad::Tape tape;
  std::vector<ad::Var> leaves(8);
  leaves[4] = tape.constant(model.w1);
  leaves[5] = tape.constant(model.b1);
  leaves[6] = tape.constant(model.w2);
  leaves[7] = tape.constant(model.b2);
  const Tensor a = mlp(tape.constant(h), leaves).value();
  return {a.data().begin(), a.data().end()};
}

}  // namespace

ad::Var bc_mlp_objective(ad::Tape& tape, std::span<const ad::Var> leaves, const BcModel& model,
                         std::span<const Trajectory> data) {
  if (leaves.size() != 8) throw ContractViolation("bc_mlp_objective: expected 8 parameter leaves");
  if (data.empty()) throw ContractViolation("bc_mlp_objective: empty dataset");
  EncoderVars enc{leaves[0], leaves[1], leaves[2], leaves[3], model.encoder.hidden};
  std::vector<const Trajectory*> ptrs;
  for (const Trajectory& t : data) ptrs.push_back(&t);
  const EncodedBatch batch = encode_batch(tape, enc, model.encoder, ptrs);
  std::vector<std::size_t> rows;
  std::vector<double> labels;
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t t = 0; t < data[i].length(); ++t)
      if (data[i].steps[t].action) {
        rows.push_back(batch.offsets[i] + t);
        labels.push_back(*data[i].steps[t].action);
      }
  ad::Var h = rows.size() == batch.prefixes.rows() ? batch.prefixes : ad::gather_rows(batch.prefixes, rows);
  return imitation_loss(mlp(h, leaves), labels, model.imitation);
}

double bc_mlp_loss(const BcModel& model, std::span<const Trajectory> data) {
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Tensor* t : model.parameters()) leaves.push_back(tape.constant(*t));
  return bc_mlp_objective(tape, leaves, model, data).item();
}

void fit_plain_bc(BcModel& model, std::span<const Trajectory> data, const FitOptions& options,
                  std::vector<double>* loss_log) {
  std::mt19937_64 rng(options.seed);
  const auto cparams = model.parameters();
  std::vector<const Tensor*> const_view(cparams.begin(), cparams.end());
  OptimizerState opt(AdamConfig{options.learning_rate}, const_view);
  std::vector<Trajectory> batch;
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0.0;
    const auto batches = epoch_batches(data.size(), options.batch_size, rng);
    for (const auto& idx : batches) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(data[i]);
      ad::Tape tape;
      std::vector<ad::Var> leaves;
      for (const Tensor* t : model.parameters()) leaves.push_back(tape.leaf(*t));
      ad::Var loss = bc_mlp_objective(tape, leaves, model, batch);
      tape.backward(loss);
      std::vector<Tensor> grads;
      for (const ad::Var& v : leaves) grads.push_back(v.grad());
      optimizer_step(opt, model.parameters(), grads);
      total += loss.item();
    }
    if (loss_log) loss_log->push_back(total / static_cast<double>(batches.size()));
  }
}

BcModel train_plain_bc(std::span<const Trajectory> data, std::size_t hidden, std::size_t width,
                       ImitationLoss imitation, const FitOptions& options, std::vector<double>* loss_log) {
  if (data.empty()) throw ContractViolation("train_plain_bc: empty dataset");
  BcModel model = BcModel::init(data.front().width(), hidden, width, options.seed);
  model.encoder.normalizer = Normalizer::fit(data);
  model.imitation = imitation;
  fit_plain_bc(model, data, options, loss_log);
  return model;
}

std::vector<double> act_all_prefixes(const Trajectory& traj, const BcModel& model) {
  return mlp_values(encode_all_prefixes(traj, model.encoder), model);
}

std::vector<double> BcController::head(const Tensor& hidden) const { return mlp_values(hidden, model_); }

}  // namespace protohail
