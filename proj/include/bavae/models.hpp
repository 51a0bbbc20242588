#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "bavae/distributions.hpp"

namespace bavae {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

/// Convolutional encoder/decoder layout. Every conv layer uses kernel 4,
/// stride 2 and padding 1, so each one halves the spatial side.
struct ArchitectureConfig {
  int image_side = 64;
  int channels = 1;
  int latent_dim = 10;
  std::vector<int> conv_widths{32, 32, 32, 32};
  int fc_width = 256;
  std::uint64_t seed = 0;
  LikelihoodSpec likelihood;

  /// 32x32 single-channel images, conv widths (16, 16), fc 64, six latents.
  static ArchitectureConfig desk();

  void validate() const;
  int pixels() const { return channels * image_side * image_side; }
  /// Spatial side after the last conv layer.
  int bottleneck_side() const { return image_side >> conv_widths.size(); }

  bool operator==(const ArchitectureConfig&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Matrix<T> value;
};

/// Encoder and decoder weights. The tensor list and shapes are fixed by
/// the config at construction.
template <typename T>
struct BasicModelParameters {
  ArchitectureConfig config;
  std::vector<NamedTensor<T>> tensors;

  std::size_t parameter_count() const;
  const Matrix<T>& at(std::string_view name) const;
  Matrix<T>& at(std::string_view name);
  /// Same names and shapes, all zeros.
  BasicModelParameters zeros_like() const;
  bool all_finite() const;

  template <typename U>
  BasicModelParameters<U> cast() const {
    BasicModelParameters<U> out;
    out.config = config;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back({t.name, t.value.template cast<U>()});
    return out;
  }
};

using ModelParameters = BasicModelParameters<float>;

/// Fan-in scaled uniform initialization, reproducible from config.seed.
ModelParameters init_parameters(const ArchitectureConfig& config);

/// Cached activations of one forward pass, consumed by Vae::backward.
template <typename T>
struct ForwardTrace {
  std::vector<Matrix<T>> conv_cols;     // im2col of each encoder conv input
  std::vector<Matrix<T>> conv_out;      // post-ReLU encoder conv outputs
  Matrix<T> enc_features;               // flattened encoder features
  Matrix<T> enc_hidden;                 // post-ReLU fc activations
  Matrix<T> mean;                       // L x B
  Matrix<T> log_var;                    // L x B
  Matrix<T> noise;                      // L x B
  Matrix<T> stddev;                     // L x B
  Matrix<T> z;                          // L x B
  Matrix<T> dec_hidden;                 // post-ReLU decoder fc activations
  Matrix<T> dec_projection;             // decoder projection (post-ReLU when convs follow)
  std::vector<Matrix<T>> deconv_in;     // conv-layout input of each transposed conv
  std::vector<Matrix<T>> deconv_out;    // outputs of each transposed conv (post-ReLU except last)
  Matrix<T> output;                     // P x B decoder means
};

/// Encoder/decoder pair over column-major batches: images are P x B with
/// pixel index c*side*side + y*side + x, latents are L x B.
template <typename T>
class Vae {
 public:
  explicit Vae(BasicModelParameters<T> params);

  const BasicModelParameters<T>& parameters() const { return params_; }
  BasicModelParameters<T>& parameters() { return params_; }
  const ArchitectureConfig& config() const { return params_.config; }

  void encode(const Matrix<T>& images, Matrix<T>& mean, Matrix<T>& log_var) const;
  Matrix<T> decode(const Matrix<T>& z) const;

  /// Encode, sample z = mean + stddev * noise, decode.
  ForwardTrace<T> forward(const Matrix<T>& images, const Matrix<T>& noise) const;

  /// Backpropagates loss gradients given with respect to the posterior
  /// parameters (direct terms only) and the decoder means. Returns
  /// gradients with the same layout as parameters().
  BasicModelParameters<T> backward(const ForwardTrace<T>& trace, const Matrix<T>& d_mean,
                                   const Matrix<T>& d_log_var, const Matrix<T>& d_output) const;

 private:
  void encode_impl(const Matrix<T>& images, ForwardTrace<T>* trace, Matrix<T>& mean, Matrix<T>& log_var) const;
  Matrix<T> decode_impl(const Matrix<T>& z, ForwardTrace<T>* trace) const;
  void check_images(const Matrix<T>& images) const;

  BasicModelParameters<T> params_;
};

extern template struct BasicModelParameters<float>;
extern template struct BasicModelParameters<double>;
extern template class Vae<float>;
extern template class Vae<double>;

/// Posterior means and log-variances for a batch of images (P x B).
PosteriorBatch encode(const ModelParameters& params, const Eigen::MatrixXf& images);
/// Decoder means for a batch of latents (L x B), returned as P x B.
Eigen::MatrixXd decode(const ModelParameters& params, const Eigen::MatrixXd& z);

struct Checkpoint {
  ModelParameters params;
  std::int64_t step = 0;
};

/// Header (JSON: config, step, tensor names and shapes) followed by raw
/// little-endian float32 data in tensor order.
void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params, std::int64_t step);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bavae
