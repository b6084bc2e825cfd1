#include "mta/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "mta/decoder.hpp"
#include "mta/rng.hpp"
#include "mta/trainer.hpp"

namespace mta {

bool GradCheckReport::passed() const { return failing_groups().empty(); }

std::vector<std::string> GradCheckReport::failing_groups() const {
  std::vector<std::string> out;
  for (const auto& g : groups)
    if (!(g.max_rel_error <= tolerance)) out.push_back(g.group);
  return out;
}

std::string GradCheckReport::summary() const {
  std::ostringstream s;
  s << model << " (tolerance " << tolerance << ")\n";
  for (const auto& g : groups)
    s << "  " << g.group << ": max rel error " << g.max_rel_error << " over " << g.entries << " entries"
      << (g.worst_entry.empty() ? "" : ", worst " + g.worst_entry)
      << (g.max_rel_error <= tolerance ? "" : "  FAIL") << "\n";
  return s.str();
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.num_queries = 3;
  c.num_classes = 2;
  c.num_prompts = 2;
  c.num_layers = 1;
  c.d_model = 4;
  c.num_heads = 2;
  c.ffn_dim = 8;
  c.d_text = 6;
  c.d_embed = 4;
  c.context_length = 2;
  c.trunk_width = 4;
  c.text_mlp_depth = 2;
  return c;
}

std::string gradient_group_of(const std::string& name) {
  auto starts = [&](const char* p) { return name.rfind(p, 0) == 0; };
  if (starts("prompt_bank/")) return "prompts";
  if (starts("decoder/mask_queries") || starts("decoder/mask_query_pos")) return "mask_queries";
  if (starts("heads/text_reduce") || starts("heads/text_up") || starts("heads/mask_up")) return "projections";
  if (starts("decoder/layer") && (name.find("/cross.") != std::string::npos || name.find("/self.") != std::string::npos))
    return "attention";
  if (starts("heads/")) return "heads";
  return "other";
}

namespace {

struct GroupAccumulator {
  std::map<std::string, GradGroupResult> groups;

  void add(const std::string& group, const std::string& entry, double analytic, double numeric, double floor) {
    auto& g = groups[group];
    g.group = group;
    ++g.entries;
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > g.max_rel_error || std::isnan(rel)) {
      g.max_rel_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
      g.worst_entry = entry;
    }
  }

  std::vector<GradGroupResult> results() const {
    std::vector<GradGroupResult> out;
    for (const auto& [_, g] : groups) out.push_back(g);
    return out;
  }
};

}  // namespace

GradCheckReport gradient_check(const ModelConfig& config, NegativeStrategy strategy, const GradCheckOptions& options) {
  MaskTextModel<double> model(config, options.seed);
  const int size = 32;
  auto spec = default_scene_spec(config.num_classes, size, size);
  const auto sample = generate_scene(spec, std::int64_t(options.seed) + 1);
  const auto targets = make_targets(sample, config.num_classes, spec.background_class);
  LossConfig loss;
  loss.strategy = strategy;

  const auto pyramid = model.encode_image(sample);
  const auto initial = model.forward(pyramid);
  const auto cross_masks = initial.cross_attention_masks;
  const auto assignments = total_loss(initial, targets, loss, config.num_prompts).assignments;

  ForwardOptions fixed;
  fixed.fixed_cross_masks = &cross_masks;
  auto evaluate = [&] {
    const auto out = model.forward(pyramid, fixed);
    return total_loss(out, targets, loss, config.num_prompts, &assignments);
  };

  model.parameters().zero_grad();
  ag::backward(evaluate().total);

  GroupAccumulator acc;
  for (auto& p : model.parameters().all()) {
    if (!p.trainable) continue;
    const Matrix<double> analytic =
        p.var.grad().size() == p.var.value().size() ? p.var.grad() : Matrix<double>(p.var.rows(), p.var.cols());
    auto& value = p.var.mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + options.step;
      const double up = evaluate().total.item();
      value[i] = saved - options.step;
      const double down = evaluate().total.item();
      value[i] = saved;
      acc.add(gradient_group_of(p.name), p.name + "[" + std::to_string(i) + "]", analytic[i],
              (up - down) / (2.0 * options.step), options.abs_floor);
    }
  }
  GradCheckReport report;
  report.model = "tiny/" + to_string(strategy);
  report.tolerance = options.tolerance;
  report.groups = acc.results();
  return report;
}

GradCheckReport gradient_check_linear_stub(const GradCheckOptions& options) {
  // Quarter-integer data and a power-of-two step keep every perturbed
  // evaluation exact, so any mismatch is the autograd's.
  Rng rng(mix_seed(options.seed, 17));
  auto dyadic = [&](std::size_t rows, std::size_t cols) {
    Matrix<double> m(rows, cols);
    for (auto& v : m.storage()) v = rng.uniform_int(-8, 8) / 4.0;
    return m;
  };
  const auto x = ag::Var<double>::constant(dyadic(5, 4));
  const auto c = ag::Var<double>::constant(dyadic(5, 3));
  auto w = ag::Var<double>::parameter(dyadic(4, 3));
  auto b = ag::Var<double>::parameter(dyadic(1, 3));
  auto f = [&] { return ag::sum_all(ag::hadamard(c, ag::add_row(ag::matmul(x, w), b))); };
  ag::backward(f());
  const double step = std::exp2(std::round(std::log2(options.step)));

  GroupAccumulator acc;
  for (auto* v : {&w, &b}) {
    const Matrix<double> analytic = v->grad();
    auto& value = v->mutable_value();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + step;
      const double up = f().item();
      value[i] = saved - step;
      const double down = f().item();
      value[i] = saved;
      acc.add("linear", std::string(v == &w ? "w" : "b") + "[" + std::to_string(i) + "]", analytic[i],
              (up - down) / (2.0 * step), options.abs_floor);
    }
  }
  GradCheckReport report;
  report.model = "linear-stub";
  report.tolerance = options.tolerance;
  report.groups = acc.results();
  return report;
}

}  // namespace mta
