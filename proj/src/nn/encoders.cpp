#include "plex/nn/encoders.hpp"

#include <cmath>

namespace plex::nn {

namespace ops = plex::tensor;

std::size_t ImageEncoderConfig::crop_height() const {
  return static_cast<std::size_t>(std::lround(crop_ratio * static_cast<double>(height)));
}

std::size_t ImageEncoderConfig::crop_width() const {
  return static_cast<std::size_t>(std::lround(crop_ratio * static_cast<double>(width)));
}

void ImageEncoderConfig::validate() const {
  if (cameras == 0 || channels == 0 || height == 0 || width == 0) {
    throw ContractError("image encoder: extents must be positive");
  }
  if (!(crop_ratio > 0.0 && crop_ratio <= 1.0) || crop_height() == 0 || crop_width() == 0) {
    throw ContractError("image encoder: crop ratio must lie in (0, 1]");
  }
  if (conv.empty()) {
    throw ContractError("image encoder: conv stack is empty");
  }
}

ImageEncoderConfig ImageEncoderConfig::resnet18_scale() {
  ImageEncoderConfig cfg;
  cfg.conv = {{64, 7, 2, 3}};
  const std::size_t widths[] = {64, 128, 256, 512};
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t stride = (stage > 0 && i == 0) ? 2 : 1;
      cfg.conv.push_back({widths[stage], 3, stride, 1});
    }
  }
  return cfg;
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::task:
      return "g";
    case Modality::image:
      return "I";
    case Modality::proprio:
      return "p";
    case Modality::action:
      return "a";
    case Modality::ret:
      return "R";
  }
  return "?";
}

Modality parse_modality(const std::string& name) {
  for (auto m : kAllModalities) {
    if (to_string(m) == name) return m;
  }
  throw ContractError("unknown modality '" + name + "'");
}

template <typename T>
Tensor<T> spatial_softmax(const Tensor<T>& featmap) {
  const bool batched = featmap.rank() == 4;
  if (!batched && featmap.rank() != 3) {
    throw DimensionError("spatial_softmax: expected [C x H x W] or [N x C x H x W], got " +
                         tensor::shape_string(featmap.shape()));
  }
  const std::size_t n = batched ? featmap.dim(0) : 1;
  const std::size_t c = featmap.dim(batched ? 1 : 0);
  const std::size_t h = featmap.dim(batched ? 2 : 1);
  const std::size_t w = featmap.dim(batched ? 3 : 2);
  auto lin = [](std::size_t i, std::size_t extent) {
    return extent > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(extent - 1) : 0.0;
  };
  std::vector<T> grid(h * w * 2);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t col = 0; col < w; ++col) {
      grid[(r * w + col) * 2] = static_cast<T>(lin(col, w));
      grid[(r * w + col) * 2 + 1] = static_cast<T>(lin(r, h));
    }
  }
  const Tensor<T> weights = ops::softmax(ops::reshape(featmap, {n * c, h * w}), 1);
  const Tensor<T> coords = ops::matmul(weights, Tensor<T>::from({h * w, 2}, std::move(grid)));
  return batched ? ops::reshape(coords, {n, 2 * c}) : ops::reshape(coords, {2 * c});
}

CropWindow choose_crop(std::size_t height, std::size_t width, std::size_t out_h, std::size_t out_w, Rng* rng) {
  if (out_h > height || out_w > width || out_h == 0 || out_w == 0) {
    throw ContractError("crop " + std::to_string(out_h) + "x" + std::to_string(out_w) + " does not fit image " +
                        std::to_string(height) + "x" + std::to_string(width));
  }
  if (rng == nullptr) {
    return {(height - out_h) / 2, (width - out_w) / 2};
  }
  std::uniform_int_distribution<std::size_t> dy(0, height - out_h), dx(0, width - out_w);
  const std::size_t top = dy(*rng);
  return {top, dx(*rng)};
}

template <typename T>
std::vector<T> crop_image(std::span<const T> image, std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t out_h, std::size_t out_w, CropWindow at) {
  if (image.size() != channels * height * width) {
    throw DimensionError("crop_image: buffer of " + std::to_string(image.size()) + " values for a " +
                         std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width) +
                         " image");
  }
  if (at.top + out_h > height || at.left + out_w > width) {
    throw ContractError("crop_image: window leaves the image");
  }
  std::vector<T> out(channels * out_h * out_w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t r = 0; r < out_h; ++r) {
      const T* src = image.data() + (c * height + at.top + r) * width + at.left;
      std::copy(src, src + out_w, out.begin() + (c * out_h + r) * out_w);
    }
  }
  return out;
}

template <typename T>
std::vector<T> random_crop(std::span<const T> image, std::size_t channels, std::size_t height, std::size_t width,
                           std::size_t out_h, std::size_t out_w, Rng* rng) {
  return crop_image(image, channels, height, width, out_h, out_w, choose_crop(height, width, out_h, out_w, rng));
}

template <typename T>
ImageEncoder<T>::ImageEncoder(const ImageEncoderConfig& cfg, std::size_t hidden, Rng& rng)
    : cfg_(cfg), hidden_(hidden) {
  cfg_.validate();
  for (std::size_t cam = 0; cam < cfg_.cameras; ++cam) {
    Camera camera;
    std::size_t in = cfg_.channels;
    for (const auto& spec : cfg_.conv) {
      const std::size_t fan_in = in * spec.kernel * spec.kernel;
      ConvLayer<T> layer;
      layer.weight = normal_param<T>({spec.out_channels, in, spec.kernel, spec.kernel},
                                     std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
      layer.bias = zero_param<T>({spec.out_channels});
      layer.stride = spec.stride;
      layer.pad = spec.pad;
      camera.conv.push_back(std::move(layer));
      in = spec.out_channels;
    }
    camera.mlp1 = Linear<T>(2 * in, hidden, 1.0 / std::sqrt(2.0 * static_cast<double>(in)), rng);
    camera.mlp2 = Linear<T>(hidden, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    cameras_.push_back(std::move(camera));
  }
  if (cfg_.cameras > 1) {
    fuse_ = Linear<T>(cfg_.cameras * hidden, hidden, 1.0 / std::sqrt(static_cast<double>(cfg_.cameras * hidden)),
                      rng);
  }
}

template <typename T>
Tensor<T> ImageEncoder<T>::operator()(std::span<const float> images, std::size_t n, Rng* crop_rng) const {
  const std::size_t per_image = cfg_.image_size();
  if (images.size() != n * per_image) {
    throw DimensionError("image encoder: expected " + std::to_string(n) + " images of " + std::to_string(cfg_.cameras) +
                         "x" + std::to_string(cfg_.channels) + "x" + std::to_string(cfg_.height) + "x" +
                         std::to_string(cfg_.width) + ", got " + std::to_string(images.size()) + " values");
  }
  const std::size_t ch = cfg_.crop_height(), cw = cfg_.crop_width(), cam_size = cfg_.camera_size();
  // one window for the whole sequence: per-frame offsets would swamp the motion between frames
  const CropWindow window = choose_crop(cfg_.height, cfg_.width, ch, cw, crop_rng);
  std::vector<Tensor<T>> per_camera;
  for (std::size_t cam = 0; cam < cfg_.cameras; ++cam) {
    std::vector<T> batch;
    batch.reserve(n * cfg_.channels * ch * cw);
    std::vector<T> src(cam_size);
    for (std::size_t i = 0; i < n; ++i) {
      const float* base = images.data() + i * per_image + cam * cam_size;
      std::copy(base, base + cam_size, src.begin());
      auto cropped = crop_image<T>(src, cfg_.channels, cfg_.height, cfg_.width, ch, cw, window);
      batch.insert(batch.end(), cropped.begin(), cropped.end());
    }
    Tensor<T> x = Tensor<T>::from({n, cfg_.channels, ch, cw}, std::move(batch));
    const Camera& camera = cameras_[cam];
    for (const auto& layer : camera.conv) {
      x = ops::relu(ops::conv2d(x, layer.weight, layer.bias, layer.stride, layer.pad));
    }
    per_camera.push_back(camera.mlp2(ops::relu(camera.mlp1(spatial_softmax(x)))));
  }
  return cfg_.cameras == 1 ? per_camera.front() : fuse_(ops::concat_cols(per_camera));
}

template <typename T>
void ImageEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t cam = 0; cam < cameras_.size(); ++cam) {
    const std::string p = prefix + ".cam" + std::to_string(cam);
    const auto& camera = cameras_[cam];
    for (std::size_t l = 0; l < camera.conv.size(); ++l) {
      out.push_back({p + ".conv" + std::to_string(l) + ".weight", camera.conv[l].weight});
      out.push_back({p + ".conv" + std::to_string(l) + ".bias", camera.conv[l].bias});
    }
    camera.mlp1.collect(p + ".mlp1", out);
    camera.mlp2.collect(p + ".mlp2", out);
  }
  if (cfg_.cameras > 1) fuse_.collect(prefix + ".fuse", out);
}

template <typename T>
Encoders<T>::Encoders(const EncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  const std::size_t h = cfg_.hidden;
  image_ = ImageEncoder<T>(cfg_.image, h, rng);
  auto input_std = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  task_head_ = Linear<T>(h, h, input_std(h), rng);
  // low-dimensional inputs are often exactly zero (a_T, R_T), so these biases start nonzero
  proprio_ = Linear<T>(cfg_.proprio_dim, h, input_std(cfg_.proprio_dim), rng, input_std(cfg_.proprio_dim));
  action_ = Linear<T>(cfg_.action_dim, h, input_std(cfg_.action_dim), rng, input_std(cfg_.action_dim));
  ret_ = Linear<T>(1, h, 1.0, rng, 1.0);
  for (auto& p : placeholders_) p = normal_param<T>({1, h}, 0.02, rng);
}

template <typename T>
Tensor<T> Encoders<T>::encode_images(std::span<const float> images, std::size_t n, Rng* crop_rng) const {
  return image_(images, n, crop_rng);
}

template <typename T>
Tensor<T> Encoders<T>::encode_task(std::span<const float> goal_image) const {
  return task_head_(image_(goal_image, 1, nullptr));
}

template <typename T>
std::size_t Encoders<T>::lowdim_size(Modality m) const {
  switch (m) {
    case Modality::proprio:
      return cfg_.proprio_dim;
    case Modality::action:
      return cfg_.action_dim;
    case Modality::ret:
      return 1;
    default:
      throw ContractError("modality " + to_string(m) + " is not low-dimensional");
  }
}

template <typename T>
Tensor<T> Encoders<T>::encode_lowdim(std::span<const float> x, std::size_t n, Modality m) const {
  const std::size_t d = lowdim_size(m);
  if (x.size() != n * d) {
    throw DimensionError("encode_lowdim(" + to_string(m) + "): expected " + std::to_string(n) + " rows of " +
                         std::to_string(d) + ", got " + std::to_string(x.size()) + " values");
  }
  const Tensor<T> in = Tensor<T>::from({n, d}, std::vector<T>(x.begin(), x.end()));
  const Linear<T>& layer = m == Modality::proprio ? proprio_ : (m == Modality::action ? action_ : ret_);
  return layer(in);
}

template <typename T>
const Tensor<T>& Encoders<T>::placeholder(Modality m) const {
  return placeholders_[static_cast<std::size_t>(m)];
}

template <typename T>
void Encoders<T>::collect_visual(const std::string& prefix, ParamList<T>& out) const {
  image_.collect(prefix + ".image", out);
  task_head_.collect(prefix + ".task_head", out);
}

template <typename T>
void Encoders<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  collect_visual(prefix, out);
  proprio_.collect(prefix + ".proprio", out);
  action_.collect(prefix + ".action", out);
  ret_.collect(prefix + ".return", out);
  for (auto m : kAllModalities) out.push_back({prefix + ".placeholder." + to_string(m), placeholder(m)});
}

template Tensor<float> spatial_softmax(const Tensor<float>&);
template Tensor<double> spatial_softmax(const Tensor<double>&);
template std::vector<float> crop_image(std::span<const float>, std::size_t, std::size_t, std::size_t, std::size_t,
                                       std::size_t, CropWindow);
template std::vector<double> crop_image(std::span<const double>, std::size_t, std::size_t, std::size_t,
                                        std::size_t, std::size_t, CropWindow);
template std::vector<float> random_crop(std::span<const float>, std::size_t, std::size_t, std::size_t, std::size_t,
                                        std::size_t, Rng*);
template std::vector<double> random_crop(std::span<const double>, std::size_t, std::size_t, std::size_t,
                                         std::size_t, std::size_t, Rng*);
template class ImageEncoder<float>;
template class ImageEncoder<double>;
template class Encoders<float>;
template class Encoders<double>;

}  // namespace plex::nn
