#include "zstal/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "zstal/error.hpp"
#include "zstal/math.hpp"

namespace zstal {

namespace {

constexpr double kTieGap = 1e-4;
constexpr double kReluGap = 1e-4;

enum class Slot { kAffine, kAct, kNorm };

Tensor gaussian_tensor(Rng& rng, std::vector<std::size_t> dims, double sigma, double mean = 0.0) {
  Tensor t(std::move(dims));
  for (double& v : t.values()) v = mean + sigma * rng.gaussian();
  return t;
}

ActivationKind random_activation(Rng& rng) {
  static constexpr ActivationKind kinds[] = {ActivationKind::kIdentity, ActivationKind::kRelu,
                                             ActivationKind::kTanh, ActivationKind::kGeluTanh};
  return kinds[rng.index(4)];
}

bool relu_inputs_clear(const Tape& tape) {
  const HeadSpec& head = *tape.head();
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    const auto* act = std::get_if<Activation>(&head.layers[l]);
    if (act == nullptr || act->kind != ActivationKind::kRelu) continue;
    for (double v : tape.input(l).values()) {
      if (std::abs(v) < kReluGap) return false;
    }
  }
  return true;
}

// Relu inputs clear of the kink and output rows clear of the zero-norm
// singularity of the normalisation.
bool head_is_regular(const HeadSpec& head, const Tensor& x) {
  const ForwardResult fwd = head_forward(head, x);
  if (!relu_inputs_clear(fwd.tape)) return false;
  for (std::size_t r = 0; r < fwd.output.rows(); ++r) {
    if (norm2(fwd.output.row(r)) < 0.1) return false;
  }
  return true;
}

// Gap between the extreme value of `idx` and the runner-up.
bool extreme_is_isolated(const std::vector<double>& s, const std::vector<std::size_t>& idx,
                         bool minimum) {
  if (idx.size() < 2) return true;
  std::vector<double> v;
  for (std::size_t i : idx) v.push_back(s[i]);
  std::sort(v.begin(), v.end());
  return minimum ? v[1] - v[0] > kTieGap : v[v.size() - 1] - v[v.size() - 2] > kTieGap;
}

bool neighbours_distinct(const std::vector<double>& s) {
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (std::abs(s[i] - s[i - 1]) < kTieGap) return false;
  }
  return true;
}

std::vector<double> random_scores(Rng& rng, std::size_t n) {
  std::vector<double> s(n);
  for (double& v : s) v = rng.uniform();
  return s;
}

GradCheckResult check_head(Rng& rng, const GradCheckOptions& opt) {
  GradCheckResult r{"head_backward", 0, 0.0, false};
  while (r.instances < opt.instances) {
    const std::size_t in = 3 + rng.index(4);
    const std::size_t out = 3 + rng.index(4);
    const std::size_t rows = 2 + rng.index(7);
    const HeadSpec head = random_head(rng, in, out, 3);
    const Tensor x = gaussian_tensor(rng, {rows, in}, 1.0);
    const Tensor dy = gaussian_tensor(rng, {rows, out}, 1.0);
    const ForwardResult fwd = head_forward(head, x);
    if (!relu_inputs_clear(fwd.tape)) continue;

    const BackwardResult bwd = head_backward(fwd.tape, dy);
    std::vector<double> analytic = flatten(bwd.param_grads);
    analytic.insert(analytic.end(), bwd.input_grad.values().begin(),
                    bwd.input_grad.values().end());

    HeadSpec probe = head;
    std::vector<double> theta;
    for (const Tensor* p : parameters(head)) {
      theta.insert(theta.end(), p->values().begin(), p->values().end());
    }
    const std::size_t n_params = theta.size();
    theta.insert(theta.end(), x.values().begin(), x.values().end());

    auto f = [&](std::span<const double> flat) {
      std::size_t k = 0;
      for (Tensor* p : parameters(probe)) {
        for (double& v : p->values()) v = flat[k++];
      }
      Tensor xp({rows, in}, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(n_params),
                                                flat.end()));
      const Tensor y = head_forward(probe, xp).output;
      return dot(y.values(), dy.values());
    };
    const auto numeric = finite_diff_grad(f, theta, opt.step);
    if (opt.corrupt == r.name) {
      for (double& v : analytic) v *= 1.001;
    }
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic, numeric));
    ++r.instances;
  }
  r.passed = r.max_relative_error < opt.tolerance;
  return r;
}

GradCheckResult check_margin(Rng& rng, const GradCheckOptions& opt) {
  GradCheckResult r{"margin_loss", 0, 0.0, false};
  while (r.instances < opt.instances) {
    const std::size_t n = 5 + rng.index(36);
    const auto s = random_scores(rng, n);
    const PseudoLabels labels = select_pos_neg(s, 20.0);
    if (!extreme_is_isolated(s, labels.positives, true) ||
        !extreme_is_isolated(s, labels.negatives, false)) {
      continue;
    }
    // Gamma below the current gap on some draws exercises the inactive hinge.
    const double gamma = rng.uniform(-0.5, 1.5);
    auto analytic = margin_loss(s, labels, gamma).grad;
    const double hinge = margin_loss(s, labels, gamma).value;
    if (hinge > 0.0 && hinge < kTieGap) continue;
    auto f = [&](std::span<const double> v) {
      return margin_loss({v.begin(), v.end()}, labels, gamma).value;
    };
    const auto numeric = finite_diff_grad(f, s, opt.step);
    if (opt.corrupt == r.name) {
      for (double& v : analytic) v *= 1.001;
    }
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic, numeric));
    ++r.instances;
  }
  r.passed = r.max_relative_error < opt.tolerance;
  return r;
}

GradCheckResult check_smoothness(Rng& rng, const GradCheckOptions& opt) {
  GradCheckResult r{"smoothness_loss", 0, 0.0, false};
  while (r.instances < opt.instances) {
    const auto s = random_scores(rng, 2 + rng.index(39));
    if (!neighbours_distinct(s)) continue;
    auto analytic = smoothness_loss(s).grad;
    auto f = [](std::span<const double> v) {
      return smoothness_loss({v.begin(), v.end()}).value;
    };
    const auto numeric = finite_diff_grad(f, s, opt.step);
    if (opt.corrupt == r.name) {
      for (double& v : analytic) v *= 1.001;
    }
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic, numeric));
    ++r.instances;
  }
  r.passed = r.max_relative_error < opt.tolerance;
  return r;
}

GradCheckResult check_objective(Rng& rng, const GradCheckOptions& opt) {
  GradCheckResult r{"objective", 0, 0.0, false};
  while (r.instances < opt.instances) {
    const auto inst = random_objective_instance(rng, InstanceShape{});
    const ObjectiveResult obj =
        evaluate_objective(inst->head_v, inst->head_t, inst->inputs, inst->labels);
    std::vector<double> analytic = flatten(obj.grad_v);
    const auto gt = flatten(obj.grad_t);
    analytic.insert(analytic.end(), gt.begin(), gt.end());

    HeadSpec hv = inst->head_v;
    HeadSpec ht = inst->head_t;
    auto f = [&](std::span<const double> flat) {
      assign_parameters(hv, ht, flat);
      return evaluate_objective(hv, ht, inst->inputs, inst->labels, false).loss;
    };
    const auto numeric =
        finite_diff_grad(f, flatten_parameters(inst->head_v, inst->head_t), opt.step);
    if (opt.corrupt == r.name) {
      for (double& v : analytic) v *= 1.001;
    }
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic, numeric));
    ++r.instances;
  }
  r.passed = r.max_relative_error < opt.tolerance;
  return r;
}

}  // namespace

HeadSpec random_head(Rng& rng, std::size_t in_dim, std::size_t out_dim, std::size_t max_layers) {
  static const std::vector<std::vector<Slot>> patterns[3] = {
      {{Slot::kAffine}},
      {{Slot::kAffine, Slot::kAct},
       {Slot::kNorm, Slot::kAffine},
       {Slot::kAffine, Slot::kNorm},
       {Slot::kAct, Slot::kAffine}},
      {{Slot::kAffine, Slot::kAct, Slot::kAffine},
       {Slot::kNorm, Slot::kAffine, Slot::kAct},
       {Slot::kAffine, Slot::kNorm, Slot::kAct},
       {Slot::kAffine, Slot::kAct, Slot::kNorm},
       {Slot::kAct, Slot::kAffine, Slot::kAct}},
  };
  const std::size_t depth = 1 + rng.index(std::clamp<std::size_t>(max_layers, 1, 3));
  const auto& options = patterns[depth - 1];
  const auto& pattern = options[rng.index(options.size())];
  const auto affines = static_cast<std::size_t>(std::count(pattern.begin(), pattern.end(), Slot::kAffine));
  const std::size_t hidden = 3 + rng.index(4);

  HeadSpec head;
  std::size_t width = in_dim;
  std::size_t affine_seen = 0;
  for (Slot slot : pattern) {
    switch (slot) {
      case Slot::kAffine: {
        ++affine_seen;
        const std::size_t next = affine_seen == affines ? out_dim : hidden;
        const double sigma = 1.0 / std::sqrt(static_cast<double>(width));
        head.layers.emplace_back(Affine{gaussian_tensor(rng, {next, width}, sigma),
                                        gaussian_tensor(rng, {next}, 0.1)});
        width = next;
        break;
      }
      case Slot::kAct:
        head.layers.emplace_back(Activation{random_activation(rng)});
        break;
      case Slot::kNorm:
        head.layers.emplace_back(LayerNorm{gaussian_tensor(rng, {width}, 0.1, 1.0),
                                           gaussian_tensor(rng, {width}, 0.1), 1e-5});
        break;
    }
  }
  return head;
}

std::unique_ptr<ObjectiveInstance> random_objective_instance(Rng& rng, const InstanceShape& shape,
                                                             std::size_t* rejected) {
  for (;;) {
    auto inst = std::make_unique<ObjectiveInstance>();
    const std::size_t n =
        shape.min_frames + rng.index(shape.max_frames - shape.min_frames + 1);
    const std::size_t dv = 3 + rng.index(4);
    const std::size_t dt = 3 + rng.index(4);
    const std::size_t de = 3 + rng.index(4);
    inst->head_v = random_head(rng, dv, de, shape.max_layers);
    inst->head_t = random_head(rng, dt, de, shape.max_layers);
    inst->frames = gaussian_tensor(rng, {n, dv}, 1.0);
    const std::size_t nd = 1 + rng.index(shape.max_descriptors);
    const std::size_t nk = 1 + rng.index(shape.max_triplets);
    inst->texts.descriptors = gaussian_tensor(rng, {nd, dt}, 1.0);
    inst->texts.affine = gaussian_tensor(rng, {nk, dt}, 1.0);
    inst->texts.distractor = gaussian_tensor(rng, {nk, dt}, 1.0);

    ObjectiveInputs& in = inst->inputs;
    in.frames = &inst->frames;
    in.texts = &inst->texts;
    in.logit_scale = rng.uniform(2.0, 10.0);
    in.logit_bias = rng.uniform(-1.0, 1.0);
    in.alpha = rng.uniform(0.1, 1.0);
    in.gamma = 5.0;
    in.lambda_tmp = rng.uniform(0.01, 1.0);
    in.loss = LossKind::kMargin;
    in.smooth_target = SmoothTarget::kRefined;

    bool ok = head_is_regular(inst->head_v, inst->frames) &&
              head_is_regular(inst->head_t, inst->texts.descriptors) &&
              head_is_regular(inst->head_t, inst->texts.affine) &&
              head_is_regular(inst->head_t, inst->texts.distractor);
    if (ok) {
      PseudoLabels none;
      const ObjectiveResult probe =
          evaluate_objective(inst->head_v, inst->head_t, in, none, false);
      inst->labels = select_pos_neg(probe.refined, 20.0);
      ok = extreme_is_isolated(probe.refined, inst->labels.positives, true) &&
           extreme_is_isolated(probe.refined, inst->labels.negatives, false) &&
           neighbours_distinct(probe.refined);
    }
    if (ok) return inst;
    if (rejected != nullptr) ++*rejected;
  }
}

std::vector<double> flatten_parameters(const HeadSpec& head_v, const HeadSpec& head_t) {
  std::vector<double> out;
  for (const HeadSpec* h : {&head_v, &head_t}) {
    for (const Tensor* p : parameters(*h)) {
      out.insert(out.end(), p->values().begin(), p->values().end());
    }
  }
  return out;
}

void assign_parameters(HeadSpec& head_v, HeadSpec& head_t, std::span<const double> flat) {
  std::size_t k = 0;
  for (HeadSpec* h : {&head_v, &head_t}) {
    for (Tensor* p : parameters(*h)) {
      for (double& v : p->values()) v = flat[k++];
    }
  }
  if (k != flat.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "assign_parameters: size mismatch");
  }
}

std::vector<double> flatten(const std::vector<Tensor>& tensors) {
  std::vector<double> out;
  for (const Tensor& t : tensors) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  if (scale == 0.0) return 0.0;
  return diff / scale;
}

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& options) {
  Rng rng(options.seed);
  std::vector<GradCheckResult> out;
  out.push_back(check_head(rng, options));
  out.push_back(check_margin(rng, options));
  out.push_back(check_smoothness(rng, options));
  out.push_back(check_objective(rng, options));
  return out;
}

}  // namespace zstal
