#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tacnet/tensor.hpp"

namespace tacnet {

/// Which of the two classic tanh sites of the LSTM cell use relu instead.
/// Sites not listed keep tanh.
enum class ReluSites { kBoth, kCandidateOnly, kCellOutputOnly };

/// Convolutional LSTM cell parameters. Gate kernels are stored fused along the
/// output-channel axis in the order (input, forget, output, candidate):
/// input_kernel is [4*Ch, Cin, k, k], hidden_kernel is [4*Ch, Ch, k, k],
/// bias is [4*Ch]. Padding (k-1)/2 keeps spatial extents.
struct ConvLSTMCellParams {
  Tensor input_kernel;
  Tensor hidden_kernel;
  Tensor bias;
  std::size_t kernel_size = 3;
  std::size_t hidden_channels = 0;
  ReluSites relu_sites = ReluSites::kBoth;

  static ConvLSTMCellParams zeros(std::size_t in_channels, std::size_t hidden_channels, std::size_t kernel_size);
  static ConvLSTMCellParams random(std::size_t in_channels, std::size_t hidden_channels, std::size_t kernel_size,
                                   std::mt19937_64& rng, double scale);

  std::size_t in_channels() const { return input_kernel.dim(1); }
  std::vector<Tensor> parameters() const { return {input_kernel, hidden_kernel, bias}; }
  void validate() const;
};

struct CellState {
  Tensor h;
  Tensor c;
};

struct DropoutSpec {
  double p = 0.0;
  bool training = false;
  std::uint64_t seed = 0;
};

/// One recurrent step:
///   i = sig(Wxi*x + Whi*h + bi), f = sig(...), o = sig(...), g = relu(...)
///   c = f . c_prev + i . g,  h = o . relu(c)
/// with x and h_prev passed through channel dropout (independent masks).
CellState cell_step(Graph& g, const ConvLSTMCellParams& params, const Tensor& x, const Tensor& h_prev,
                    const Tensor& c_prev, const DropoutSpec& dropout);

/// Runs the cell over a sequence from zero state. With reversed=true the
/// sequence is consumed back to front; output index t always refers to frame t.
std::vector<Tensor> run_direction(Graph& g, const ConvLSTMCellParams& params, const std::vector<Tensor>& sequence,
                                  bool reversed, const DropoutSpec& dropout);

struct BiConvLSTMLayer {
  ConvLSTMCellParams forward_cell;
  ConvLSTMCellParams backward_cell;
  Tensor fuse_kernel;  // [Cout, 2*Ch, 1, 1]
  Tensor fuse_bias;    // [Cout]
  double dropout_p = 0.0;

  static BiConvLSTMLayer random(std::size_t in_channels, std::size_t hidden_channels, std::size_t out_channels,
                                std::size_t kernel_size, std::mt19937_64& rng);

  std::size_t out_channels() const { return fuse_kernel.dim(0); }
  std::vector<Tensor> parameters() const;
  void validate() const;
};

/// Per frame: relu(conv1x1(concat(h_fwd[t], h_bwd[t]))).
std::vector<Tensor> bidirectional_fuse(Graph& g, const BiConvLSTMLayer& layer, const std::vector<Tensor>& sequence,
                                       bool training, std::uint64_t seed);

}  // namespace tacnet
