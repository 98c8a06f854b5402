#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "plex/nn/layers.hpp"

namespace plex::nn {

struct ConvSpec {
  std::size_t out_channels = 8;
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t pad = 1;
};

struct ImageEncoderConfig {
  std::size_t cameras = 1;
  std::size_t channels = 3;
  std::size_t height = 24;
  std::size_t width = 24;
  std::vector<ConvSpec> conv = {{8, 3, 2, 1}, {16, 3, 2, 1}, {32, 3, 2, 1}};
  double crop_ratio = 0.9;

  std::size_t camera_size() const { return channels * height * width; }
  std::size_t image_size() const { return cameras * camera_size(); }
  std::size_t crop_height() const;
  std::size_t crop_width() const;
  void validate() const;

  // Plain conv stack with ResNet-18's channel plan and depth (about 11M weights).
  static ImageEncoderConfig resnet18_scale();
};

// Token-producing modalities: task spec g, image I, proprio p, action a, return-to-go R.
enum class Modality { task, image, proprio, action, ret };
inline constexpr std::array<Modality, 5> kAllModalities = {Modality::task, Modality::image, Modality::proprio,
                                                           Modality::action, Modality::ret};

std::string to_string(Modality m);
Modality parse_modality(const std::string& name);

// featmap [C x H x W] -> [2C], or [N x C x H x W] -> [N x 2C]. Output is (x_c, y_c) per channel:
// softmax over locations, then expected coordinates on a [-1, 1] grid (x = column, y = row).
template <typename T>
Tensor<T> spatial_softmax(const Tensor<T>& featmap);

struct CropWindow {
  std::size_t top = 0;
  std::size_t left = 0;
};

// Uniform offset when rng is given, centered otherwise.
CropWindow choose_crop(std::size_t height, std::size_t width, std::size_t out_h, std::size_t out_w, Rng* rng);

// image [C x H x W] -> [C x out_h x out_w].
template <typename T>
std::vector<T> crop_image(std::span<const T> image, std::size_t channels, std::size_t height, std::size_t width,
                          std::size_t out_h, std::size_t out_w, CropWindow at);

template <typename T>
std::vector<T> random_crop(std::span<const T> image, std::size_t channels, std::size_t height, std::size_t width,
                           std::size_t out_h, std::size_t out_w, Rng* rng);

template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // [O x C x k x k]
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;
};

// phi_I: crop -> conv stack -> spatial softmax -> MLP, per camera; cameras fused by a projection.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const ImageEncoderConfig& cfg, std::size_t hidden, Rng& rng);

  // images: n consecutive image tuples of cfg.image_size() floats. With crop_rng, one random crop window is
  // shared by all n images.
  Tensor<T> operator()(std::span<const float> images, std::size_t n, Rng* crop_rng) const;

  const ImageEncoderConfig& config() const { return cfg_; }
  void collect(const std::string& prefix, ParamList<T>& out) const;

 private:
  struct Camera {
    std::vector<ConvLayer<T>> conv;
    Linear<T> mlp1;
    Linear<T> mlp2;
  };

  ImageEncoderConfig cfg_;
  std::size_t hidden_ = 0;
  std::vector<Camera> cameras_;
  Linear<T> fuse_;  // only with several cameras
};

struct EncoderConfig {
  ImageEncoderConfig image;
  std::size_t hidden = 32;
  std::size_t proprio_dim = 2;
  std::size_t action_dim = 2;
};

// All modality encoders plus the placeholder bank.
template <typename T>
class Encoders {
 public:
  Encoders() = default;
  Encoders(const EncoderConfig& cfg, Rng& rng);

  // [n x h]
  Tensor<T> encode_images(std::span<const float> images, std::size_t n, Rng* crop_rng = nullptr) const;
  // phi_g: shared image encoder (center crop) followed by the task head. [1 x h]
  Tensor<T> encode_task(std::span<const float> goal_image) const;
  // rows of width dim(m) -> [n x h]; m in {proprio, action, ret}
  Tensor<T> encode_lowdim(std::span<const float> x, std::size_t n, Modality m) const;
  // [1 x h]
  const Tensor<T>& placeholder(Modality m) const;

  std::size_t lowdim_size(Modality m) const;
  const EncoderConfig& config() const { return cfg_; }

  void collect(const std::string& prefix, ParamList<T>& out) const;
  // phi_I and phi_g only
  void collect_visual(const std::string& prefix, ParamList<T>& out) const;

 private:
  EncoderConfig cfg_;
  ImageEncoder<T> image_;
  Linear<T> task_head_;
  Linear<T> proprio_;
  Linear<T> action_;
  Linear<T> ret_;
  std::array<Tensor<T>, 5> placeholders_;
};

}  // namespace plex::nn
