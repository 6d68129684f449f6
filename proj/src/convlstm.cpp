#include "tacnet/convlstm.hpp"

#include <cmath>
#include <stdexcept>

#include "tacnet/ops.hpp"
#include "tacnet/seed.hpp"

namespace tacnet {
namespace {

void fill_normal(Tensor& t, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
}

/// Gate pre-activations already include W_x * x + b; adds W_h * h and applies the
/// cell update.
CellState step_from_projection(Graph& g, const ConvLSTMCellParams& params, const Tensor& x_projection,
                               const Tensor& h_prev, const Tensor& c_prev, const DropoutSpec& dropout,
                               std::uint64_t hidden_seed) {
  const int pad = static_cast<int>(params.kernel_size / 2);
  const std::size_t ch = params.hidden_channels;
  Tensor h_in = ops::dropout2d(g, h_prev, dropout.p, dropout.training, hidden_seed);
  Tensor pre = ops::add(g, x_projection, ops::conv2d(g, h_in, params.hidden_kernel, Tensor(), 1, pad));
  Tensor i = ops::sigmoid(g, ops::slice_channels(g, pre, 0, ch));
  Tensor f = ops::sigmoid(g, ops::slice_channels(g, pre, ch, ch));
  Tensor o = ops::sigmoid(g, ops::slice_channels(g, pre, 2 * ch, ch));
  const auto candidate_kind =
      params.relu_sites == ReluSites::kCellOutputOnly ? ops::Activation::kTanh : ops::Activation::kRelu;
  const auto output_kind =
      params.relu_sites == ReluSites::kCandidateOnly ? ops::Activation::kTanh : ops::Activation::kRelu;
  Tensor cand = ops::activation(g, ops::slice_channels(g, pre, 3 * ch, ch), candidate_kind);
  Tensor c = ops::add(g, ops::mul(g, f, c_prev), ops::mul(g, i, cand));
  Tensor h = ops::mul(g, o, ops::activation(g, c, output_kind));
  return {h, c};
}

void check_step_shapes(const ConvLSTMCellParams& params, const Tensor& x, const Tensor& h_prev, const Tensor& c_prev) {
  if (x.rank() != 4 || x.dim(1) != params.in_channels()) {
    throw std::invalid_argument("cell_step: input " + shape_to_string(x.shape()) + " does not match input kernel " +
                                shape_to_string(params.input_kernel.shape()));
  }
  const Shape state{x.dim(0), params.hidden_channels, x.dim(2), x.dim(3)};
  if (h_prev.shape() != state || c_prev.shape() != state) {
    throw std::invalid_argument("cell_step: state shapes " + shape_to_string(h_prev.shape()) + "/" +
                                shape_to_string(c_prev.shape()) + " expected " + shape_to_string(state));
  }
}

}  // namespace

ConvLSTMCellParams ConvLSTMCellParams::zeros(std::size_t in_channels, std::size_t hidden_channels,
                                             std::size_t kernel_size) {
  if (kernel_size % 2 == 0) throw std::invalid_argument("ConvLSTMCellParams: kernel size must be odd");
  ConvLSTMCellParams p;
  p.kernel_size = kernel_size;
  p.hidden_channels = hidden_channels;
  p.input_kernel = Tensor({4 * hidden_channels, in_channels, kernel_size, kernel_size}, 0.0, true);
  p.hidden_kernel = Tensor({4 * hidden_channels, hidden_channels, kernel_size, kernel_size}, 0.0, true);
  p.bias = Tensor({4 * hidden_channels}, 0.0, true);
  return p;
}

ConvLSTMCellParams ConvLSTMCellParams::random(std::size_t in_channels, std::size_t hidden_channels,
                                              std::size_t kernel_size, std::mt19937_64& rng, double scale) {
  auto p = zeros(in_channels, hidden_channels, kernel_size);
  const double fan_in = static_cast<double>((in_channels + hidden_channels) * kernel_size * kernel_size);
  fill_normal(p.input_kernel, rng, scale / std::sqrt(fan_in));
  fill_normal(p.hidden_kernel, rng, scale / std::sqrt(fan_in));
  // Forget gate starts open.
  auto b = p.bias.values();
  for (std::size_t c = hidden_channels; c < 2 * hidden_channels; ++c) b[c] = 1.0;
  return p;
}

void ConvLSTMCellParams::validate() const {
  if (kernel_size % 2 == 0) throw std::invalid_argument("ConvLSTMCellParams: kernel size must be odd");
  const Shape hk{4 * hidden_channels, hidden_channels, kernel_size, kernel_size};
  if (input_kernel.rank() != 4 || input_kernel.dim(0) != 4 * hidden_channels || input_kernel.dim(2) != kernel_size ||
      input_kernel.dim(3) != kernel_size || hidden_kernel.shape() != hk || bias.shape() != Shape{4 * hidden_channels}) {
    throw std::invalid_argument("ConvLSTMCellParams: inconsistent shapes input " +
                                shape_to_string(input_kernel.shape()) + " hidden " +
                                shape_to_string(hidden_kernel.shape()) + " bias " + shape_to_string(bias.shape()));
  }
}

CellState cell_step(Graph& g, const ConvLSTMCellParams& params, const Tensor& x, const Tensor& h_prev,
                    const Tensor& c_prev, const DropoutSpec& dropout) {
  params.validate();
  check_step_shapes(params, x, h_prev, c_prev);
  const int pad = static_cast<int>(params.kernel_size / 2);
  Tensor x_in = ops::dropout2d(g, x, dropout.p, dropout.training, mix_seed(dropout.seed, 0, 0));
  Tensor proj = ops::conv2d(g, x_in, params.input_kernel, params.bias, 1, pad);
  return step_from_projection(g, params, proj, h_prev, c_prev, dropout, mix_seed(dropout.seed, 0, 1));
}

std::vector<Tensor> run_direction(Graph& g, const ConvLSTMCellParams& params, const std::vector<Tensor>& sequence,
                                  bool reversed, const DropoutSpec& dropout) {
  if (sequence.empty()) throw std::invalid_argument("run_direction: empty sequence");
  params.validate();
  const std::size_t L = sequence.size();
  const Tensor& first = sequence.front();
  for (const auto& x : sequence) {
    if (x.shape() != first.shape()) {
      throw std::invalid_argument("run_direction: frame shapes differ " + shape_to_string(first.shape()) + " vs " +
                                  shape_to_string(x.shape()));
    }
  }
  const std::size_t B = first.dim(0);
  Tensor h(Shape{B, params.hidden_channels, first.dim(2), first.dim(3)});
  Tensor c = h;
  check_step_shapes(params, first, h, c);

  // Input projections do not depend on the recurrence, so they run as one batch
  // over time. Step k consumes frame order[k].
  std::vector<std::size_t> order(L);
  for (std::size_t k = 0; k < L; ++k) order[k] = reversed ? L - 1 - k : k;
  std::vector<Tensor> inputs;
  inputs.reserve(L);
  for (std::size_t k = 0; k < L; ++k) {
    inputs.push_back(ops::dropout2d(g, sequence[order[k]], dropout.p, dropout.training, mix_seed(dropout.seed, k, 0)));
  }
  const int pad = static_cast<int>(params.kernel_size / 2);
  Tensor stacked = L == 1 ? inputs.front() : ops::concat_batch(g, inputs);
  Tensor projections = ops::conv2d(g, stacked, params.input_kernel, params.bias, 1, pad);

  std::vector<Tensor> out(L);
  for (std::size_t k = 0; k < L; ++k) {
    Tensor proj = L == 1 ? projections : ops::slice_batch(g, projections, k * B, B);
    CellState next = step_from_projection(g, params, proj, h, c, dropout, mix_seed(dropout.seed, k, 1));
    h = next.h;
    c = next.c;
    out[order[k]] = h;
  }
  return out;
}

BiConvLSTMLayer BiConvLSTMLayer::random(std::size_t in_channels, std::size_t hidden_channels,
                                        std::size_t out_channels, std::size_t kernel_size, std::mt19937_64& rng) {
  BiConvLSTMLayer layer;
  layer.forward_cell = ConvLSTMCellParams::random(in_channels, hidden_channels, kernel_size, rng, 1.0);
  layer.backward_cell = ConvLSTMCellParams::random(in_channels, hidden_channels, kernel_size, rng, 1.0);
  layer.fuse_kernel = Tensor({out_channels, 2 * hidden_channels, 1, 1}, 0.0, true);
  fill_normal(layer.fuse_kernel, rng, std::sqrt(2.0 / static_cast<double>(2 * hidden_channels)));
  layer.fuse_bias = Tensor({out_channels}, 0.0, true);
  return layer;
}

std::vector<Tensor> BiConvLSTMLayer::parameters() const {
  auto p = forward_cell.parameters();
  for (auto& t : backward_cell.parameters()) p.push_back(t);
  p.push_back(fuse_kernel);
  p.push_back(fuse_bias);
  return p;
}

void BiConvLSTMLayer::validate() const {
  forward_cell.validate();
  backward_cell.validate();
  if (forward_cell.input_kernel.shape() != backward_cell.input_kernel.shape() ||
      forward_cell.hidden_channels != backward_cell.hidden_channels) {
    throw std::invalid_argument("BiConvLSTMLayer: forward and backward cells differ in shape");
  }
  if (fuse_kernel.rank() != 4 || fuse_kernel.dim(1) != 2 * forward_cell.hidden_channels || fuse_kernel.dim(2) != 1 ||
      fuse_kernel.dim(3) != 1 || fuse_bias.shape() != Shape{fuse_kernel.dim(0)}) {
    throw std::invalid_argument("BiConvLSTMLayer: fuse kernel " + shape_to_string(fuse_kernel.shape()) +
                                " incompatible with hidden channels " +
                                std::to_string(forward_cell.hidden_channels));
  }
}

std::vector<Tensor> bidirectional_fuse(Graph& g, const BiConvLSTMLayer& layer, const std::vector<Tensor>& sequence,
                                       bool training, std::uint64_t seed) {
  layer.validate();
  const DropoutSpec fwd{layer.dropout_p, training, mix_seed(seed, 0)};
  const DropoutSpec bwd{layer.dropout_p, training, mix_seed(seed, 1)};
  auto h_fwd = run_direction(g, layer.forward_cell, sequence, false, fwd);
  auto h_bwd = run_direction(g, layer.backward_cell, sequence, true, bwd);
  const std::size_t L = sequence.size();
  const std::size_t B = sequence.front().dim(0);
  Tensor both = ops::concat_channels(g, L == 1 ? h_fwd.front() : ops::concat_batch(g, h_fwd),
                                     L == 1 ? h_bwd.front() : ops::concat_batch(g, h_bwd));
  Tensor fused = ops::relu(g, ops::conv2d(g, both, layer.fuse_kernel, layer.fuse_bias, 1, 0));
  std::vector<Tensor> out;
  out.reserve(L);
  for (std::size_t t = 0; t < L; ++t) out.push_back(L == 1 ? fused : ops::slice_batch(g, fused, t * B, B));
  return out;
}

}  // namespace tacnet
