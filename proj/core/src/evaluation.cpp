#include "mta/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include <json.hpp>

#include "mta/errors.hpp"

namespace mta {

void IouCounts::add(const std::vector<int>& prediction, const std::vector<int>& ground_truth) {
  if (prediction.size() != ground_truth.size()) throw ConfigError("prediction and ground truth differ in size");
  const int classes = int(intersection.size());
  std::vector<std::int64_t> pred_count(intersection.size(), 0), gt_count(intersection.size(), 0),
      inter(intersection.size(), 0);
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const int p = prediction[i], g = ground_truth[i];
    if (p < 0 || p >= classes || g < 0 || g >= classes) throw ConfigError("label outside [0, C)");
    ++pred_count[std::size_t(p)];
    ++gt_count[std::size_t(g)];
    if (p == g) ++inter[std::size_t(p)];
  }
  for (std::size_t c = 0; c < intersection.size(); ++c) {
    intersection[c] += inter[c];
    union_[c] += pred_count[c] + gt_count[c] - inter[c];
    correct += inter[c];
  }
  pixels += std::int64_t(prediction.size());
  ++samples;
}

EvalReport report_from_counts(const IouCounts& counts) {
  EvalReport r;
  r.sample_count = counts.samples;
  double sum = 0.0;
  int counted = 0;
  for (std::size_t c = 0; c < counts.intersection.size(); ++c) {
    const bool present = counts.union_[c] > 0;
    r.class_counted.push_back(present);
    const double iou = present ? double(counts.intersection[c]) / double(counts.union_[c]) : 0.0;
    r.per_class_iou.push_back(iou);
    if (present) {
      sum += iou;
      ++counted;
    }
  }
  r.miou = counted > 0 ? sum / counted : 0.0;
  r.pixel_accuracy = counts.pixels > 0 ? double(counts.correct) / double(counts.pixels) : 0.0;
  return r;
}

std::vector<int> predict_semantic_map(const MaskTextModel<float>& model, const SegmentationSample& sample) {
  const auto out = model.forward(sample);
  const auto& last = out.layers.back();
  return inference_semantic_map(last.mask_logits.value(), last.class_logits.value(), out.prediction_height,
                                out.prediction_width, sample.height / out.prediction_height);
}

EvalReport evaluate_miou(const MaskTextModel<float>& model, const std::vector<SegmentationSample>& samples,
                         int background_class, unsigned threads) {
  if (samples.empty()) throw ConfigError("evaluation set is empty");
  std::vector<std::vector<int>> predictions(samples.size());
  threads = std::max(1u, std::min<unsigned>(threads, unsigned(samples.size())));
  if (threads == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) predictions[i] = predict_semantic_map(model, samples[i]);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i; (i = next.fetch_add(1)) < samples.size();)
            predictions[i] = predict_semantic_map(model, samples[i]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  IouCounts counts(model.config().num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i)
    counts.add(predictions[i], semantic_map_of(samples[i], background_class));
  return report_from_counts(counts);
}

std::string to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["miou"] = report.miou;
  j["pixel_accuracy"] = report.pixel_accuracy;
  j["sample_count"] = report.sample_count;
  j["per_class_iou"] = report.per_class_iou;
  j["class_counted"] = report.class_counted;
  j["config"] = report.config_echo;
  return j.dump(2);
}

}  // namespace mta
