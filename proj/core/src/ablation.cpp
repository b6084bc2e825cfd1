#include "mta/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mta/evaluation.hpp"
#include "mta/trainer.hpp"

namespace mta {

std::vector<AblationVariant> ablation_variants(const RunConfig& base) {
  std::vector<AblationVariant> out;

  RunConfig baseline = base;
  baseline.model.use_text_queries = false;
  baseline.loss.weights.sim = 0.0;
  out.push_back({"Baseline", "components", baseline, 47.4});

  RunConfig text = base;
  text.model.use_text_queries = true;
  text.model.joint_self_attention = true;
  text.model.num_prompts = 1;
  text.loss.weights.sim = 0.0;
  out.push_back({"+ Text-Enhanced", "components", text, 48.1});

  RunConfig mtcl = text;
  mtcl.loss.weights.sim = base.loss.weights.sim > 0.0 ? base.loss.weights.sim : 1.0;
  out.push_back({"+ Text-Enhanced + MTCL", "components", mtcl, 48.6});

  RunConfig mtpl = mtcl;
  mtpl.model.num_prompts = base.model.num_prompts;
  mtpl.loss.strategy = base.loss.strategy;
  out.push_back({"+ Text-Enhanced + MTCL + MTPL", "components", mtpl, 49.1});

  const double separate[] = {48.5, 48.7, 48.9, 48.2};
  const double mix[] = {48.6, 49.1, 48.9, 48.4};
  for (auto strategy : {NegativeStrategy::SeparateNeg, NegativeStrategy::MixNeg}) {
    for (int k = 2; k <= 5; ++k) {
      RunConfig c = mtpl;
      c.model.num_prompts = k;
      c.loss.strategy = strategy;
      const double paper = strategy == NegativeStrategy::MixNeg ? mix[k - 2] : separate[k - 2];
      out.push_back({to_string(strategy) + " K=" + std::to_string(k), "prompts", c, paper});
    }
  }

  RunConfig split = mtpl;
  split.model.joint_self_attention = false;
  out.push_back({"Separate attention", "attention", split, 48.6});
  return out;
}

std::vector<std::string> directional_flags(const std::vector<AblationRow>& rows, double tolerance) {
  std::vector<std::string> flags;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].mean < rows[i - 1].mean - tolerance) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s: mean %.2f below %s mean %.2f by more than %.1f points", rows[i].name.c_str(),
                    100.0 * rows[i].mean, rows[i - 1].name.c_str(), 100.0 * rows[i - 1].mean, 100.0 * tolerance);
      flags.emplace_back(buf);
    }
  }
  return flags;
}

AblationReport run_ablation(const RunConfig& base, const std::vector<SegmentationSample>& train,
                            const std::vector<SegmentationSample>& eval, const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("ablation needs at least one seed");
  const auto variants = ablation_variants(base);
  const std::size_t seeds = options.seeds.size();
  const std::size_t jobs = variants.size() * seeds;
  std::vector<double> miou(jobs, 0.0);

  auto run_job = [&](std::size_t job) {
    const auto& v = variants[job / seeds];
    RunConfig c = v.config;
    c.train.seed = options.seeds[job % seeds];
    if (options.iterations >= 0) c.train.iterations = options.iterations;
    Trainer trainer(c, train);
    while (trainer.iteration() < c.train.iterations) trainer.step();
    miou[job] = evaluate_miou(trainer.model(), eval, c.dataset.spec.background_class).miou;
    if (options.log) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s seed %llu: mIoU %.4f", v.name.c_str(),
                    static_cast<unsigned long long>(c.train.seed), miou[job]);
      options.log(buf);
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, unsigned(jobs)));
  if (threads == 1) {
    for (std::size_t j = 0; j < jobs; ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t j; (j = next.fetch_add(1)) < jobs;) run_job(j);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  AblationReport report;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    AblationRow row;
    row.name = variants[vi].name;
    row.table = variants[vi].table;
    row.seeds = options.seeds;
    row.paper_miou = variants[vi].paper_miou;
    for (std::size_t s = 0; s < seeds; ++s) row.miou.push_back(miou[vi * seeds + s]);
    for (double m : row.miou) row.mean += m;
    row.mean /= double(seeds);
    if (seeds > 1) {
      double ss = 0.0;
      for (double m : row.miou) ss += (m - row.mean) * (m - row.mean);
      row.stdev = std::sqrt(ss / double(seeds - 1));
    }
    auto& table = row.table == "components" ? report.components
                  : row.table == "prompts"  ? report.prompts
                                            : report.attention;
    table.push_back(std::move(row));
  }
  report.directional_flags = directional_flags(report.components);
  return report;
}

namespace {

nlohmann::ordered_json rows_json(const std::vector<AblationRow>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["name"] = r.name;
    j["seeds"] = r.seeds;
    j["miou"] = r.miou;
    j["mean"] = r.mean;
    j["stdev"] = r.stdev;
    j["paper_miou"] = r.paper_miou ? nlohmann::ordered_json(*r.paper_miou) : nlohmann::ordered_json(nullptr);
    arr.push_back(j);
  }
  return arr;
}

}  // namespace

std::string to_json(const AblationReport& report) {
  nlohmann::ordered_json j;
  j["components"] = rows_json(report.components);
  j["prompts"] = rows_json(report.prompts);
  j["attention"] = rows_json(report.attention);
  j["directional_flags"] = report.directional_flags;
  return j.dump(2);
}

std::string to_markdown(const AblationReport& report) {
  std::ostringstream s;
  auto table = [&](const char* title, const std::vector<AblationRow>& rows) {
    s << "### " << title << "\n\n| variant | toy mIoU (mean ± stdev) | seeds | paper mIoU (annotation) |\n|---|---|---|---|\n";
    for (const auto& r : rows) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * r.mean, 100.0 * r.stdev);
      s << "| " << r.name << " | " << buf << " | ";
      for (std::size_t i = 0; i < r.seeds.size(); ++i) s << (i ? "," : "") << r.seeds[i];
      s << " | ";
      if (r.paper_miou) {
        std::snprintf(buf, sizeof buf, "%.1f", *r.paper_miou);
        s << buf;
      }
      s << " |\n";
    }
    s << "\n";
  };
  table("Components", report.components);
  table("Prompts x negatives", report.prompts);
  table("Attention", report.attention);
  if (report.directional_flags.empty()) {
    s << "Directional check: each component row within 0.5 points of or above its predecessor.\n";
  } else {
    s << "Directional check flagged:\n";
    for (const auto& f : report.directional_flags) s << "- " << f << "\n";
  }
  return s.str();
}

}  // namespace mta
