#include "mta/encoders.hpp"

#include "mta/binary_io.hpp"
#include "mta/errors.hpp"

namespace mta {

template <typename T>
Matrix<T> image_to_pixels(const std::vector<float>& image, int height, int width) {
  const std::size_t pixels = std::size_t(height) * std::size_t(width);
  if (image.size() != pixels * 3) throw ConfigError("image size does not match 3 x H x W");
  Matrix<T> out(pixels, 3);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < pixels; ++i) out(i, c) = static_cast<T>(image[c * pixels + i]);
  return out;
}

// ---- image encoder -----------------------------------------------------------

template <typename T>
ImageEncoder<T>::ImageEncoder(ParameterSet<T>& params, const ModelConfig& config) {
  Rng rng(mix_seed(config.encoder_seed, 1));
  const bool train = config.trunk_trainable;
  const std::size_t w1 = std::size_t(std::max(4, config.trunk_width / 2)), w = std::size_t(config.trunk_width);
  const std::size_t d = std::size_t(config.d_model);
  const double he = std::sqrt(2.0);
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, int k, int stride, int pad,
                  double gain) {
    Conv c;
    c.proj = Linear<T>::create(params, "image_encoder/" + name, std::size_t(k * k) * cin, cout, rng, train, gain);
    c.kernel = k;
    c.stride = stride;
    c.pad = pad;
    return c;
  };
  stem_ = conv("stem", 3, w1, 4, 4, 0, he);
  stage2_ = conv("stage2", w1, w, 3, 2, 1, he);
  stage3_ = conv("stage3", w, w, 3, 2, 1, he);
  stage4_ = conv("stage4", w, w, 3, 2, 1, he);
  lateral4_ = conv("lateral4", w1, d, 1, 1, 0, 1.0);
  lateral8_ = conv("lateral8", w, d, 1, 1, 0, 1.0);
  lateral16_ = conv("lateral16", w, d, 1, 1, 0, 1.0);
  lateral32_ = conv("lateral32", w, d, 1, 1, 0, 1.0);
  mask_features_ = conv("mask_features", d, d, 3, 1, 1, 1.0);
}

template <typename T>
ag::Var<T> ImageEncoder<T>::apply(const Conv& conv, const ag::Var<T>& x, int height, int width) const {
  if (conv.kernel == 1 && conv.stride == 1) return conv.proj(x);
  return conv.proj(ag::im2col(x, std::size_t(height), std::size_t(width), std::size_t(conv.kernel),
                              std::size_t(conv.stride), std::size_t(conv.pad)));
}

template <typename T>
FeaturePyramid<T> ImageEncoder<T>::encode(const Matrix<T>& pixels, int height, int width) const {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0)
    throw ConfigError("image dimensions must be positive multiples of 32");
  if (pixels.rows() != std::size_t(height) * std::size_t(width) || pixels.cols() != 3)
    throw ConfigError("pixel matrix must be [H*W x 3]");
  const auto x = ag::Var<T>::constant(pixels);
  const int h4 = height / 4, w4 = width / 4;
  const auto c4 = ag::relu(apply(stem_, x, height, width));
  const auto c8 = ag::relu(apply(stage2_, c4, h4, w4));
  const auto c16 = ag::relu(apply(stage3_, c8, h4 / 2, w4 / 2));
  const auto c32 = ag::relu(apply(stage4_, c16, h4 / 4, w4 / 4));

  const auto p32 = apply(lateral32_, c32, h4 / 8, w4 / 8);
  const auto p16 = ag::add(apply(lateral16_, c16, h4 / 4, w4 / 4),
                           ag::upsample_nearest(p32, std::size_t(h4 / 8), std::size_t(w4 / 8), 2));
  const auto p8 = ag::add(apply(lateral8_, c8, h4 / 2, w4 / 2),
                          ag::upsample_nearest(p16, std::size_t(h4 / 4), std::size_t(w4 / 4), 2));
  const auto p4 = ag::add(apply(lateral4_, c4, h4, w4),
                          ag::upsample_nearest(p8, std::size_t(h4 / 2), std::size_t(w4 / 2), 2));

  FeaturePyramid<T> out;
  out.levels = {p32, p16, p8};
  for (int l = 0; l < 3; ++l) {
    out.level_height[l] = height / FeaturePyramid<T>::kLevelStrides[l];
    out.level_width[l] = width / FeaturePyramid<T>::kLevelStrides[l];
  }
  out.prediction = apply(mask_features_, p4, h4, w4);
  out.prediction_height = h4;
  out.prediction_width = w4;
  return out;
}

// ---- prompts and text encoder ---------------------------------------------------

template <typename T>
PromptBank<T> PromptBank<T>::create(ParameterSet<T>& params, const ModelConfig& config, Rng& prompt_rng) {
  if (config.num_prompts < 1) throw ConfigError("text encoder: K must be >= 1");
  if (config.num_classes < 1) throw ConfigError("text encoder: C must be >= 1");
  PromptBank bank;
  bank.num_prompts = config.num_prompts;
  bank.context_length = config.context_length;
  const bool learnable = config.text_embeddings_path.empty();
  bank.prompts = params.add(
      "prompt_bank/prompts",
      prompt_rng.normal_matrix<T>(std::size_t(config.num_prompts * config.context_length), std::size_t(config.d_embed), 1.0),
      learnable);
  Rng token_rng(mix_seed(config.encoder_seed, 3));
  bank.class_tokens = params.add(
      "prompt_bank/class_tokens",
      token_rng.normal_matrix<T>(std::size_t(config.num_classes), std::size_t(config.d_embed), 1.0), false);
  return bank;
}

template <typename T>
TextEncoder<T>::TextEncoder(ParameterSet<T>& params, const ModelConfig& config) : d_text_(config.d_text) {
  Rng rng(mix_seed(config.encoder_seed, 2));
  const std::size_t in = std::size_t(2 * config.d_embed), hidden = std::size_t(2 * config.d_embed);
  hidden_ = Linear<T>::create(params, "text_encoder/hidden", in, hidden, rng, false, 1.0);
  // rows of t come out with roughly unit norm
  const double gain = std::sqrt(2.5 / double(config.d_text));
  output_ = Linear<T>::create(params, "text_encoder/output", hidden, std::size_t(config.d_text), rng, false, gain);
}

template <typename T>
TextEmbeddingSet<T> TextEncoder<T>::encode(const PromptBank<T>& bank) const {
  const int num_prompts = bank.num_prompts;
  const int num_classes = int(bank.class_tokens.rows());
  if (num_prompts < 1 || num_classes < 1) throw ConfigError("text encoder: K and C must be >= 1");
  const auto pooled = ag::group_mean_rows(bank.prompts, std::size_t(bank.context_length));
  std::vector<std::size_t> prompt_index, class_index;
  for (int c = 0; c < num_classes; ++c)
    for (int k = 0; k < num_prompts; ++k) {
      prompt_index.push_back(std::size_t(k));
      class_index.push_back(std::size_t(c));
    }
  const auto tokens = ag::concat_cols<T>({ag::gather_rows(pooled, prompt_index),
                                          ag::gather_rows(bank.class_tokens, class_index)});
  TextEmbeddingSet<T> out;
  out.rows = output_(ag::tanh(hidden_(tokens)));
  out.num_prompts = num_prompts;
  out.num_classes = num_classes;
  return out;
}

// ---- embedding files -------------------------------------------------------------

void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file) {
  if (file.rows.rows() != std::size_t(file.num_prompts) * std::size_t(file.num_classes) ||
      file.rows.cols() != std::size_t(file.d_text))
    throw ConfigError("embedding matrix shape does not match K*C x D_text");
  io::ByteWriter out;
  out.magic(kEmbeddingMagic);
  out.u32(std::uint32_t(file.num_prompts));
  out.u32(std::uint32_t(file.num_classes));
  out.u32(std::uint32_t(file.d_text));
  for (float v : file.rows.storage()) out.f32(v);
  io::write_file_atomic(path, out.buffer());
}

EmbeddingFile decode_embeddings(std::vector<std::uint8_t> bytes) {
  io::ByteReader in(std::move(bytes));
  in.expect_magic(kEmbeddingMagic, "embedding file");
  EmbeddingFile f;
  f.num_prompts = int(in.u32());
  f.num_classes = int(in.u32());
  f.d_text = int(in.u32());
  const std::size_t rows = std::size_t(f.num_prompts) * std::size_t(f.num_classes);
  f.rows = Matrix<float>(rows, std::size_t(f.d_text));
  for (auto& v : f.rows.storage()) v = in.f32();
  if (in.remaining() != 0) throw ParseError("trailing bytes after embedding payload", in.offset());
  return f;
}

EmbeddingFile read_embeddings(const std::filesystem::path& path, int num_prompts, int num_classes, int d_text) {
  auto f = decode_embeddings(io::read_file(path));
  auto check = [](const char* what, int expected, int actual) {
    if (expected != actual)
      throw ConfigError(std::string("embedding file ") + what + " mismatch: expected " + std::to_string(expected) +
                        ", actual " + std::to_string(actual));
  };
  check("K", num_prompts, f.num_prompts);
  check("C", num_classes, f.num_classes);
  check("D_text", d_text, f.d_text);
  return f;
}

template Matrix<float> image_to_pixels<float>(const std::vector<float>&, int, int);
template Matrix<double> image_to_pixels<double>(const std::vector<float>&, int, int);
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template struct PromptBank<float>;
template struct PromptBank<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace mta
