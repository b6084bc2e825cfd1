#include "mta/decoder.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "mta/errors.hpp"

namespace mta {

namespace {

std::uint64_t prompt_seed(std::uint64_t init_seed) { return mix_seed(init_seed, 7); }

}  // namespace

template <typename T>
MaskTextModel<T>::MaskTextModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_((validate(config), config)),
      params_(),
      image_encoder_(params_, config_),
      text_encoder_(params_, config_),
      bank_([&] {
        Rng prompt_rng(prompt_seed(init_seed));
        return PromptBank<T>::create(params_, config_, prompt_rng);
      }()) {
  Rng rng(init_seed);
  const auto d = std::size_t(config_.d_model), dt = std::size_t(config_.d_text);
  const auto n = std::size_t(config_.num_queries), c = std::size_t(config_.num_classes);

  text_reduce_ = Mlp<T>::create(params_, "heads/text_reduce", dt, d, d, 2, rng);
  text_up_ = Mlp<T>::create(params_, "heads/text_up", d, dt, dt, config_.text_mlp_depth, rng, 0.1);
  mask_up_ = Mlp<T>::create(params_, "heads/mask_up", d, dt, dt, 2, rng, 0.25);
  mask_embed_ = Mlp<T>::create(params_, "heads/mask_embed", d, d, d, 3, rng);
  class_head_ = Linear<T>::create(params_, "heads/class", d, c + 1, rng);
  output_norm_ = LayerNormParams<T>::create(params_, "heads/output_norm", d);

  mask_queries_ = params_.add("decoder/mask_queries", rng.normal_matrix<T>(n, d, 1.0), true);
  mask_query_pos_ = params_.add("decoder/mask_query_pos", rng.normal_matrix<T>(n, d, 1.0), true);
  level_embed_ = params_.add("decoder/level_embed", rng.normal_matrix<T>(3, d, 1.0), true);

  const auto ffn = std::size_t(config_.ffn_dim);
  for (int i = 0; i < config_.num_layers; ++i) {
    const std::string p = "decoder/layer" + std::to_string(i) + "/";
    Layer layer;
    layer.cross_norm = LayerNormParams<T>::create(params_, p + "cross_norm", d);
    layer.self_norm = LayerNormParams<T>::create(params_, p + "self_norm", d);
    layer.ffn_norm = LayerNormParams<T>::create(params_, p + "ffn_norm", d);
    for (auto [attn, tag] : {std::pair{&layer.cross, "cross"}, std::pair{&layer.self, "self"}}) {
      attn->q = Linear<T>::create(params_, p + tag + ".q", d, d, rng);
      attn->k = Linear<T>::create(params_, p + tag + ".k", d, d, rng);
      attn->v = Linear<T>::create(params_, p + tag + ".v", d, d, rng);
      attn->o = Linear<T>::create(params_, p + tag + ".o", d, d, rng, true, 0.5);
    }
    layer.ffn_in = Linear<T>::create(params_, p + "ffn.in", d, ffn, rng);
    layer.ffn_out = Linear<T>::create(params_, p + "ffn.out", ffn, d, rng, true, 0.5);
    layers_.push_back(std::move(layer));
  }

  if (config_.use_text_queries && !config_.joint_self_attention) {
    const std::size_t q = config_.total_query_count(), kc = config_.text_query_count();
    self_allowed_.assign(q * q, 0);
    for (std::size_t r = 0; r < q; ++r)
      for (std::size_t s = 0; s < q; ++s) self_allowed_[r * q + s] = (r < kc) == (s < kc);
  }
}

template <typename T>
void MaskTextModel<T>::use_imported_embeddings(const Matrix<T>& rows) {
  const std::size_t expected = std::size_t(config_.num_prompts) * std::size_t(config_.num_classes);
  if (rows.rows() != expected || rows.cols() != std::size_t(config_.d_text))
    throw ConfigError("imported embeddings: expected " + std::to_string(expected) + "x" +
                      std::to_string(config_.d_text) + ", got " + std::to_string(rows.rows()) + "x" +
                      std::to_string(rows.cols()));
  imported_ = rows;
  for (auto& p : params_.all())
    if (p.name == "prompt_bank/prompts") {
      p.trainable = false;
      p.var.set_requires_grad(false);
    }
}

template <typename T>
std::vector<std::uint8_t> MaskTextModel<T>::frozen_state_bytes() const {
  std::vector<std::uint8_t> out;
  for (const auto& p : params_.all()) {
    if (p.trainable) continue;
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(p.var.value().data());
    out.insert(out.end(), bytes, bytes + p.var.value().size() * sizeof(T));
  }
  return out;
}

template <typename T>
FeaturePyramid<T> MaskTextModel<T>::encode_image(const SegmentationSample& sample) const {
  return image_encoder_.encode(image_to_pixels<T>(sample.image, sample.height, sample.width), sample.height,
                               sample.width);
}

template <typename T>
TextEmbeddingSet<T> MaskTextModel<T>::encode_text() const {
  if (imported_) {
    TextEmbeddingSet<T> out;
    out.rows = ag::Var<T>::constant(*imported_);
    out.num_prompts = config_.num_prompts;
    out.num_classes = config_.num_classes;
    return out;
  }
  return text_encoder_.encode(bank_);
}

template <typename T>
ag::Var<T> MaskTextModel<T>::reduce_text(const ag::Var<T>& text) const {
  if (text.cols() != std::size_t(config_.d_text)) throw ConfigError("reduce_text: input width differs from d_text");
  return text_reduce_(text);
}

template <typename T>
ag::Var<T> MaskTextModel<T>::attend(const Attention& attn, const ag::Var<T>& queries, const ag::Var<T>& keys,
                                    const ag::Var<T>& values, const std::vector<std::uint8_t>* allowed,
                                    std::vector<Matrix<T>>* trace) const {
  const auto q = attn.q(queries), k = attn.k(keys), v = attn.v(values);
  const std::size_t heads = std::size_t(config_.num_heads), dh = q.cols() / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  std::vector<ag::Var<T>> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = ag::slice_cols(q, h * dh, dh), kh = ag::slice_cols(k, h * dh, dh);
    const auto probs = ag::softmax_rows(ag::scale(ag::matmul_bt(qh, kh), scale), allowed);
    if (trace) trace->push_back(probs.value());
    outs.push_back(ag::matmul(probs, ag::slice_cols(v, h * dh, dh)));
  }
  return attn.o(heads == 1 ? outs.front() : ag::concat_cols(outs));
}

template <typename T>
ag::Var<T> MaskTextModel<T>::query_positions() const {
  const std::size_t kc = config_.text_query_count();
  if (kc == 0) return mask_query_pos_;
  return ag::concat_rows<T>({ag::Var<T>::constant(Matrix<T>(kc, std::size_t(config_.d_model))), mask_query_pos_});
}

template <typename T>
ag::Var<T> MaskTextModel<T>::decoder_layer(int layer, const ag::Var<T>& queries, const FeaturePyramid<T>& pyramid,
                                           const std::vector<std::uint8_t>* cross_allowed,
                                           std::vector<Matrix<T>>* attention_trace) const {
  if (layer < 0 || layer >= config_.num_layers) throw ConfigError("decoder_layer: layer index out of range");
  if (queries.rows() != config_.total_query_count() || queries.cols() != std::size_t(config_.d_model))
    throw ConfigError("decoder_layer: query set must be [(K*C+N) x d_model]");
  const auto& w = layers_[std::size_t(layer)];
  const int level = level_for_layer(layer);
  const auto& features = pyramid.levels[std::size_t(level)];
  const auto pos = query_positions();

  const auto key_pos = ag::add_row(
      ag::Var<T>::constant(sine_position_encoding<T>(pyramid.level_height[std::size_t(level)],
                                                     pyramid.level_width[std::size_t(level)], config_.d_model)),
      ag::slice_rows(level_embed_, std::size_t(level), 1));
  const auto keys = ag::add(features, key_pos);

  auto x = queries;
  {
    const auto normed = w.cross_norm(x);
    x = ag::add(x, attend(w.cross, ag::add(normed, pos), keys, features, cross_allowed, attention_trace));
  }
  {
    const auto normed = w.self_norm(x);
    const auto qk = ag::add(normed, pos);
    x = ag::add(x, attend(w.self, qk, qk, normed, self_allowed_.empty() ? nullptr : &self_allowed_,
                          attention_trace));
  }
  {
    const auto normed = w.ffn_norm(x);
    x = ag::add(x, w.ffn_out(ag::gelu(w.ffn_in(normed))));
  }
  if (!x.value().all_finite()) throw NumericalFault("non-finite decoder activations", layer);
  return x;
}

template <typename T>
std::pair<ag::Var<T>, ag::Var<T>> MaskTextModel<T>::project_to_clip_space(const ag::Var<T>& text_queries,
                                                                        const ag::Var<T>& mask_queries,
                                                                        const ag::Var<T>& initial_text) const {
  return {ag::add(text_up_(text_queries), initial_text), mask_up_(mask_queries)};
}

template <typename T>
ag::Var<T> similarity_scores(const ag::Var<T>& mask_proj, const ag::Var<T>& text_proj, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("similarity temperature must be > 0");
  return ag::scale(ag::matmul_bt(mask_proj, text_proj), T(1.0 / temperature));
}

template <typename T>
ag::Var<T> MaskTextModel<T>::predict_masks(const ag::Var<T>& mask_queries,
                                           const ag::Var<T>& prediction_features) const {
  return ag::matmul_bt(mask_embed_(mask_queries), prediction_features);
}

template <typename T>
ag::Var<T> MaskTextModel<T>::classify_masks(const ag::Var<T>& mask_queries) const {
  return class_head_(mask_queries);
}

template <typename T>
LayerRecord<T> MaskTextModel<T>::heads(const ag::Var<T>& queries, const FeaturePyramid<T>& pyramid,
                                       const ag::Var<T>& initial_text) const {
  const std::size_t kc = config_.text_query_count(), n = std::size_t(config_.num_queries);
  const auto normed = output_norm_(queries);
  LayerRecord<T> rec;
  const auto masks = kc == 0 ? normed : ag::slice_rows(normed, kc, n);
  rec.mask_logits = predict_masks(masks, pyramid.prediction);
  rec.class_logits = classify_masks(masks);
  if (kc > 0) {
    auto [tp, mp] = project_to_clip_space(ag::slice_rows(normed, 0, kc), masks, initial_text);
    rec.text_proj = tp;
    rec.mask_proj = mp;
    rec.similarity = similarity_scores(mp, tp, config_.temperature);
  } else {
    rec.mask_proj = mask_up_(masks);
  }
  return rec;
}

template <typename T>
std::vector<std::uint8_t> MaskTextModel<T>::cross_mask_from(const Matrix<T>& mask_logits, int pred_h, int pred_w,
                                                            int level_h, int level_w) const {
  const std::size_t kc = config_.text_query_count(), n = std::size_t(config_.num_queries);
  const std::size_t keys = std::size_t(level_h) * std::size_t(level_w);
  const int fy = pred_h / level_h, fx = pred_w / level_w;
  std::vector<std::uint8_t> allowed((kc + n) * keys, 1);
  for (std::size_t q = 0; q < n; ++q) {
    std::uint8_t* row = allowed.data() + (kc + q) * keys;
    bool any = false;
    for (int ly = 0; ly < level_h; ++ly)
      for (int lx = 0; lx < level_w; ++lx) {
        T mean = T(0);
        for (int dy = 0; dy < fy; ++dy)
          for (int dx = 0; dx < fx; ++dx) {
            const T logit = mask_logits(q, std::size_t((ly * fy + dy) * pred_w + lx * fx + dx));
            mean += T(1) / (T(1) + std::exp(-logit));
          }
        mean /= T(fy * fx);
        const bool fg = mean >= T(0.5);
        row[std::size_t(ly * level_w + lx)] = fg;
        any = any || fg;
      }
    if (!any) std::fill(row, row + keys, std::uint8_t(1));  // empty prediction: attend everywhere
  }
  return allowed;
}

template <typename T>
DecoderOutput<T> MaskTextModel<T>::forward(const SegmentationSample& sample, const ForwardOptions& options) const {
  return forward(encode_image(sample), options);
}

template <typename T>
DecoderOutput<T> MaskTextModel<T>::forward(const FeaturePyramid<T>& pyramid, const ForwardOptions& options) const {
  DecoderOutput<T> out;
  out.prediction_height = pyramid.prediction_height;
  out.prediction_width = pyramid.prediction_width;

  ag::Var<T> queries = mask_queries_;
  if (config_.use_text_queries) {
    const auto text = encode_text();
    out.initial_text = text.rows;
    queries = ag::concat_rows<T>({reduce_text(text.rows), mask_queries_});
  }

  Matrix<T> previous_masks;
  if (config_.masked_attention && !options.fixed_cross_masks)
    previous_masks = heads(queries, pyramid, out.initial_text).mask_logits.value();

  for (int i = 0; i < config_.num_layers; ++i) {
    const int level = level_for_layer(i);
    const std::vector<std::uint8_t>* allowed = nullptr;
    if (options.fixed_cross_masks) {
      const auto& fixed = *options.fixed_cross_masks;
      if (fixed.size() != std::size_t(config_.num_layers)) throw ConfigError("fixed_cross_masks: one mask per layer");
      if (!fixed[std::size_t(i)].empty()) allowed = &fixed[std::size_t(i)];
      out.cross_attention_masks.push_back(fixed[std::size_t(i)]);
    } else if (config_.masked_attention) {
      out.cross_attention_masks.push_back(cross_mask_from(previous_masks, pyramid.prediction_height,
                                                          pyramid.prediction_width,
                                                          pyramid.level_height[std::size_t(level)],
                                                          pyramid.level_width[std::size_t(level)]));
      allowed = &out.cross_attention_masks.back();
    } else {
      out.cross_attention_masks.emplace_back();
    }

    std::vector<Matrix<T>> trace;
    queries = decoder_layer(i, queries, pyramid, allowed, options.trace_attention ? &trace : nullptr);
    if (options.trace_attention) out.attention_probs.push_back(std::move(trace));

    auto rec = heads(queries, pyramid, out.initial_text);
    rec.level = level;
    if (rec.similarity.defined() && !rec.similarity.value().all_finite())
      throw NumericalFault("non-finite similarity scores", i);
    previous_masks = rec.mask_logits.value();
    out.layers.push_back(std::move(rec));
  }
  out.final_queries = queries;
  return out;
}

template <typename T>
Matrix<T> sine_position_encoding(int height, int width, int channels) {
  const int half = channels / 2;
  const int pairs = std::max(1, half / 2);
  Matrix<T> out(std::size_t(height) * std::size_t(width), std::size_t(channels));
  const double two_pi = 2.0 * std::numbers::pi;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double coords[2] = {(y + 0.5) / height * two_pi, (x + 0.5) / width * two_pi};
      for (int axis = 0; axis < 2; ++axis)
        for (int i = 0; i < half; ++i) {
          const double freq = std::pow(10000.0, -double(i / 2) / double(pairs));
          const double arg = coords[axis] * freq;
          out(std::size_t(y * width + x), std::size_t(axis * half + i)) = T(i % 2 == 0 ? std::sin(arg) : std::cos(arg));
        }
    }
  return out;
}

template <typename T>
std::vector<int> inference_semantic_map(const Matrix<T>& mask_logits, const Matrix<T>& class_logits,
                                        int prediction_height, int prediction_width, int stride) {
  const std::size_t queries = mask_logits.rows(), pixels = mask_logits.cols();
  if (class_logits.rows() != queries || class_logits.cols() < 2)
    throw ConfigError("inference: class logits must be [N x C+1]");
  if (pixels != std::size_t(prediction_height) * std::size_t(prediction_width))
    throw ConfigError("inference: mask logits do not match the prediction grid");
  const std::size_t classes = class_logits.cols() - 1;

  Matrix<T> probs(queries, classes);
  for (std::size_t q = 0; q < queries; ++q) {
    const auto row = class_logits.row(q);
    T mx = row[0];
    for (T v : row) mx = std::max(mx, v);
    T total = T(0);
    for (T v : row) total += std::exp(v - mx);
    for (std::size_t c = 0; c < classes; ++c) probs(q, c) = std::exp(row[c] - mx) / total;
  }

  std::vector<int> coarse(pixels, 0);
  std::vector<T> score(classes);
  for (std::size_t p = 0; p < pixels; ++p) {
    std::fill(score.begin(), score.end(), T(0));
    for (std::size_t q = 0; q < queries; ++q) {
      const T m = T(1) / (T(1) + std::exp(-mask_logits(q, p)));
      for (std::size_t c = 0; c < classes; ++c) score[c] += probs(q, c) * m;
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (score[c] > score[best]) best = c;
    coarse[p] = int(best);
  }

  const int height = prediction_height * stride, width = prediction_width * stride;
  std::vector<int> out(std::size_t(height) * std::size_t(width));
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      out[std::size_t(y * width + x)] = coarse[std::size_t((y / stride) * prediction_width + x / stride)];
  return out;
}

template class MaskTextModel<float>;
template class MaskTextModel<double>;
template ag::Var<float> similarity_scores<float>(const ag::Var<float>&, const ag::Var<float>&, double);
template ag::Var<double> similarity_scores<double>(const ag::Var<double>&, const ag::Var<double>&, double);
template Matrix<float> sine_position_encoding<float>(int, int, int);
template Matrix<double> sine_position_encoding<double>(int, int, int);
template std::vector<int> inference_semantic_map<float>(const Matrix<float>&, const Matrix<float>&, int, int, int);
template std::vector<int> inference_semantic_map<double>(const Matrix<double>&, const Matrix<double>&, int, int,
                                                         int);

}  // namespace mta
