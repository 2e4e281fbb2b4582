#pragma once

#include <string>
#include <variant>
#include <vector>

#include "zstal/tensor.hpp"

namespace zstal {

// y = W x + b, W is d_out x d_in.
struct Affine {
  Tensor weight;
  Tensor bias;
};

enum class ActivationKind { kIdentity, kRelu, kTanh, kGeluTanh };

const char* to_string(ActivationKind kind);
ActivationKind parse_activation(const std::string& name);

struct Activation {
  ActivationKind kind = ActivationKind::kIdentity;
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double epsilon = 1e-5;
};

using Layer = std::variant<Affine, Activation, LayerNorm>;

// The adaptable terminal layers of one encoder.
struct HeadSpec {
  std::vector<Layer> layers;

  // Input / output widths; 0 when undetermined (no Affine or LayerNorm).
  std::size_t input_dim() const;
  std::size_t output_dim() const;

  // Human-readable list of problems; empty iff the head is well formed.
  std::vector<std::string> check() const;
};

// Trainable tensors in layer order: Affine -> weight, bias; LayerNorm ->
// gamma, beta. Activation layers contribute nothing.
std::vector<Tensor*> parameters(HeadSpec& head);
std::vector<const Tensor*> parameters(const HeadSpec& head);
std::size_t parameter_count(const HeadSpec& head);

// Cached intermediates of one forward pass. Holds a pointer to the head that
// produced it; the head must outlive the tape and stay unmodified until the
// matching backward call.
class Tape {
 public:
  const HeadSpec* head() const noexcept { return head_; }
  std::size_t depth() const noexcept { return inputs_.size(); }
  const Tensor& input(std::size_t layer) const { return inputs_[layer]; }
  const Tensor& output() const { return output_; }

 private:
  friend struct HeadOps;
  const HeadSpec* head_ = nullptr;
  std::vector<Tensor> inputs_;      // input to each layer
  std::vector<Tensor> normalized_;  // LayerNorm x-hat, empty otherwise
  std::vector<std::vector<double>> inv_std_;  // LayerNorm per-row 1/sigma
  Tensor output_;
};

struct ForwardResult {
  Tensor output;
  Tape tape;
};

struct BackwardResult {
  std::vector<Tensor> param_grads;  // aligned with parameters(head)
  Tensor input_grad;
};

ForwardResult head_forward(const HeadSpec& head, const Tensor& x);
BackwardResult head_backward(const Tape& tape, const Tensor& output_grad);

// Scalar activation and its derivative, exposed for tests.
double activate(ActivationKind kind, double x);
double activate_derivative(ActivationKind kind, double x);

}  // namespace zstal
