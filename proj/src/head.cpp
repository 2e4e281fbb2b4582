#include "zstal/head.hpp"

#include <cmath>
#include <numbers>

#include "zstal/error.hpp"

namespace zstal {

namespace {

constexpr double kGeluCoeff = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

}  // namespace

const char* to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kIdentity: return "identity";
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kTanh: return "tanh";
    case ActivationKind::kGeluTanh: return "gelu_tanh";
  }
  return "identity";
}

ActivationKind parse_activation(const std::string& name) {
  if (name == "identity") return ActivationKind::kIdentity;
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "tanh") return ActivationKind::kTanh;
  if (name == "gelu_tanh" || name == "gelu") return ActivationKind::kGeluTanh;
  throw Error(ErrorCode::kInvalidArgument, "unknown activation '" + name + "'");
}

double activate(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::kIdentity: return x;
    case ActivationKind::kRelu: return x > 0.0 ? x : 0.0;
    case ActivationKind::kTanh: return std::tanh(x);
    case ActivationKind::kGeluTanh: {
      const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
      return 0.5 * x * (1.0 + std::tanh(u));
    }
  }
  return x;
}

double activate_derivative(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::kIdentity: return 1.0;
    // relu'(0) := 0
    case ActivationKind::kRelu: return x > 0.0 ? 1.0 : 0.0;
    case ActivationKind::kTanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::kGeluTanh: {
      const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluScale * (1.0 + 3.0 * kGeluCoeff * x * x);
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
    }
  }
  return 1.0;
}

std::size_t HeadSpec::input_dim() const {
  for (const Layer& layer : layers) {
    if (const auto* a = std::get_if<Affine>(&layer)) return a->weight.cols();
    if (const auto* n = std::get_if<LayerNorm>(&layer)) return n->gamma.size();
  }
  return 0;
}

std::size_t HeadSpec::output_dim() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    if (const auto* a = std::get_if<Affine>(&*it)) return a->weight.rows();
    if (const auto* n = std::get_if<LayerNorm>(&*it)) return n->gamma.size();
  }
  return 0;
}

std::vector<std::string> HeadSpec::check() const {
  std::vector<std::string> problems;
  bool has_affine = false;
  std::size_t width = 0;  // 0: not yet pinned
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(i);
    std::visit(
        Overloaded{
            [&](const Affine& a) {
              has_affine = true;
              if (a.weight.rank() != 2) {
                problems.push_back(where + ": affine weight must be rank 2");
                return;
              }
              if (a.bias.size() != a.weight.rows()) {
                problems.push_back(where + ": bias length " +
                                   std::to_string(a.bias.size()) +
                                   " != weight rows " +
                                   std::to_string(a.weight.rows()));
              }
              if (width != 0 && a.weight.cols() != width) {
                problems.push_back(where + ": expects input width " +
                                   std::to_string(a.weight.cols()) +
                                   ", previous layer yields " +
                                   std::to_string(width));
              }
              if (!a.weight.all_finite() || !a.bias.all_finite()) {
                problems.push_back(where + ": non-finite parameter");
              }
              width = a.weight.rows();
            },
            [&](const Activation&) {},
            [&](const LayerNorm& n) {
              if (n.beta.size() != n.gamma.size()) {
                problems.push_back(where + ": gamma/beta length differ");
              }
              if (width != 0 && n.gamma.size() != width) {
                problems.push_back(where + ": layernorm width " +
                                   std::to_string(n.gamma.size()) +
                                   ", previous layer yields " +
                                   std::to_string(width));
              }
              if (!(n.epsilon > 0.0)) {
                problems.push_back(where + ": layernorm epsilon must be positive");
              }
              if (!n.gamma.all_finite() || !n.beta.all_finite()) {
                problems.push_back(where + ": non-finite parameter");
              }
              width = n.gamma.size();
            },
        },
        layers[i]);
  }
  if (!has_affine) problems.emplace_back("head has no affine layer");
  return problems;
}

std::vector<Tensor*> parameters(HeadSpec& head) {
  std::vector<Tensor*> out;
  for (Layer& layer : head.layers) {
    if (auto* a = std::get_if<Affine>(&layer)) {
      out.push_back(&a->weight);
      out.push_back(&a->bias);
    } else if (auto* n = std::get_if<LayerNorm>(&layer)) {
      out.push_back(&n->gamma);
      out.push_back(&n->beta);
    }
  }
  return out;
}

std::vector<const Tensor*> parameters(const HeadSpec& head) {
  auto mut = parameters(const_cast<HeadSpec&>(head));
  return {mut.begin(), mut.end()};
}

std::size_t parameter_count(const HeadSpec& head) {
  std::size_t n = 0;
  for (const Tensor* t : parameters(head)) n += t->size();
  return n;
}

struct HeadOps {
  static ForwardResult forward(const HeadSpec& head, const Tensor& x) {
    const std::size_t in = head.input_dim();
    if (x.cols() != in) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "head_forward: input width " + std::to_string(x.cols()) +
                      " != head input width " + std::to_string(in));
    }
    ForwardResult result;
    Tape& tape = result.tape;
    tape.head_ = &head;
    tape.inputs_.reserve(head.layers.size());
    tape.normalized_.resize(head.layers.size());
    tape.inv_std_.resize(head.layers.size());

    Tensor current = x;
    const std::size_t n = x.rows();
    for (std::size_t l = 0; l < head.layers.size(); ++l) {
      tape.inputs_.push_back(current);
      const Layer& layer = head.layers[l];
      if (const auto* a = std::get_if<Affine>(&layer)) {
        Tensor y = matmul_bt(current, a->weight);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < y.cols(); ++j) y.at(i, j) += a->bias[j];
        }
        current = std::move(y);
      } else if (const auto* act = std::get_if<Activation>(&layer)) {
        for (double& v : current.values()) v = activate(act->kind, v);
      } else {
        const auto& ln = std::get<LayerNorm>(layer);
        const std::size_t d = current.cols();
        Tensor xhat = Tensor::matrix(n, d);
        std::vector<double> inv_std(n);
        for (std::size_t i = 0; i < n; ++i) {
          auto row = current.row(i);
          double mean = 0.0;
          for (double v : row) mean += v;
          mean /= static_cast<double>(d);
          double var = 0.0;
          for (double v : row) var += (v - mean) * (v - mean);
          var /= static_cast<double>(d);
          inv_std[i] = 1.0 / std::sqrt(var + ln.epsilon);
          for (std::size_t j = 0; j < d; ++j) {
            xhat.at(i, j) = (row[j] - mean) * inv_std[i];
            row[j] = ln.gamma[j] * xhat.at(i, j) + ln.beta[j];
          }
        }
        tape.normalized_[l] = std::move(xhat);
        tape.inv_std_[l] = std::move(inv_std);
      }
    }
    tape.output_ = current;
    result.output = std::move(current);
    return result;
  }

  static BackwardResult backward(const Tape& tape, const Tensor& dy) {
    if (tape.head_ == nullptr) {
      throw Error(ErrorCode::kInvalidArgument, "head_backward: empty tape");
    }
    const HeadSpec& head = *tape.head_;
    if (tape.inputs_.size() != head.layers.size() ||
        dy.rows() != tape.output_.rows() || dy.cols() != tape.output_.cols()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "head_backward: gradient shape does not match tape");
    }

    // Gradients are produced back to front, then reversed into parameter order.
    std::vector<Tensor> grads_rev;
    Tensor grad = dy;
    const std::size_t n = dy.rows();
    for (std::size_t l = head.layers.size(); l-- > 0;) {
      const Layer& layer = head.layers[l];
      const Tensor& in = tape.inputs_[l];
      if (const auto* a = std::get_if<Affine>(&layer)) {
        Tensor dw = matmul_at(grad, in);  // d_out x d_in
        Tensor db = Tensor::vector(std::vector<double>(a->weight.rows(), 0.0));
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < db.size(); ++j) db[j] += grad.at(i, j);
        }
        grad = matmul(grad, a->weight);
        dw = Tensor(a->weight.dims(), std::move(dw.values()));
        grads_rev.push_back(std::move(db));
        grads_rev.push_back(std::move(dw));
      } else if (const auto* act = std::get_if<Activation>(&layer)) {
        for (std::size_t k = 0; k < grad.size(); ++k) {
          grad[k] *= activate_derivative(act->kind, in[k]);
        }
      } else {
        const auto& ln = std::get<LayerNorm>(layer);
        const Tensor& xhat = tape.normalized_[l];
        const std::size_t d = in.cols();
        Tensor dgamma = Tensor::vector(std::vector<double>(d, 0.0));
        Tensor dbeta = Tensor::vector(std::vector<double>(d, 0.0));
        Tensor dx = Tensor::matrix(n, d);
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_dxhat = 0.0;
          double mean_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            dgamma[j] += grad.at(i, j) * xhat.at(i, j);
            dbeta[j] += grad.at(i, j);
            dxhat[j] = grad.at(i, j) * ln.gamma[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xhat.at(i, j);
          }
          mean_dxhat /= static_cast<double>(d);
          mean_dxhat_xhat /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            dx.at(i, j) = tape.inv_std_[l][i] *
                          (dxhat[j] - mean_dxhat - xhat.at(i, j) * mean_dxhat_xhat);
          }
        }
        grad = std::move(dx);
        grads_rev.push_back(std::move(dbeta));
        grads_rev.push_back(std::move(dgamma));
      }
    }
    BackwardResult result;
    result.param_grads.assign(std::make_move_iterator(grads_rev.rbegin()),
                              std::make_move_iterator(grads_rev.rend()));
    result.input_grad = std::move(grad);
    return result;
  }
};

ForwardResult head_forward(const HeadSpec& head, const Tensor& x) {
  return HeadOps::forward(head, x);
}

BackwardResult head_backward(const Tape& tape, const Tensor& output_grad) {
  return HeadOps::backward(tape, output_grad);
}

}  // namespace zstal
