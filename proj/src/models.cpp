#include "bavae/models.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "json.hpp"

namespace bavae {

namespace {

constexpr int kKernel = 4;
constexpr int kTaps = kKernel * kKernel;

// The encoder head starts near the prior so early per-dimension KL reflects learning, not init noise.
constexpr double kHeadInitGain = 0.1;

// Conv-layout tensors are (channels) x (batch * side * side), column b*side*side + y*side + x.
// im2col for a kernel-4 / stride-2 / pad-1 conv over `side` inputs; the result has one column
// per output position (side / 2 per axis) and rows channel*16 + ky*4 + kx.
template <typename T>
Matrix<T> im2col(const Matrix<T>& input, int channels, int side, Eigen::Index batch) {
  const int out_side = side / 2;
  const Eigen::Index in_area = static_cast<Eigen::Index>(side) * side;
  Matrix<T> cols(static_cast<Eigen::Index>(channels) * kTaps, batch * out_side * out_side);
  const T* src = input.data();
  T* dst = cols.data();
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_side; ++oy) {
      for (int ox = 0; ox < out_side; ++ox) {
        for (int c = 0; c < channels; ++c) {
          for (int ky = 0; ky < kKernel; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            for (int kx = 0; kx < kKernel; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= side || ix < 0 || ix >= side) {
                *dst++ = T(0);
              } else {
                *dst++ = src[(b * in_area + iy * side + ix) * channels + c];
              }
            }
          }
        }
      }
    }
  }
  return cols;
}

// Adjoint of im2col: scatter-add columns back onto a (channels) x (batch * side * side) tensor.
template <typename T>
Matrix<T> col2im(const Matrix<T>& cols, int channels, int side, Eigen::Index batch) {
  const int out_side = side / 2;
  const Eigen::Index in_area = static_cast<Eigen::Index>(side) * side;
  Matrix<T> image = Matrix<T>::Zero(channels, batch * in_area);
  const T* src = cols.data();
  T* dst = image.data();
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int oy = 0; oy < out_side; ++oy) {
      for (int ox = 0; ox < out_side; ++ox) {
        for (int c = 0; c < channels; ++c) {
          for (int ky = 0; ky < kKernel; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            for (int kx = 0; kx < kKernel; ++kx, ++src) {
              const int ix = ox * 2 - 1 + kx;
              if (iy < 0 || iy >= side || ix < 0 || ix >= side) continue;
              dst[(b * in_area + iy * side + ix) * channels + c] += *src;
            }
          }
        }
      }
    }
  }
  return image;
}

// (channels) x (batch * area)  ->  (channels * area) x batch, feature index c*area + p.
template <typename T>
Matrix<T> flatten(const Matrix<T>& act, Eigen::Index area, Eigen::Index batch) {
  const Eigen::Index channels = act.rows();
  Matrix<T> out(channels * area, batch);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index p = 0; p < area; ++p)
      for (Eigen::Index c = 0; c < channels; ++c) out(c * area + p, b) = act(c, b * area + p);
  return out;
}

template <typename T>
Matrix<T> unflatten(const Matrix<T>& features, Eigen::Index channels, Eigen::Index area) {
  const Eigen::Index batch = features.cols();
  Matrix<T> out(channels, batch * area);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (Eigen::Index p = 0; p < area; ++p)
      for (Eigen::Index c = 0; c < channels; ++c) out(c, b * area + p) = features(c * area + p, b);
  return out;
}

template <typename T>
void relu_inplace(Matrix<T>& m) {
  m = m.cwiseMax(T(0));
}

// Zero the gradient where the post-ReLU activation is not positive.
template <typename T>
void relu_mask(Matrix<T>& grad, const Matrix<T>& activated) {
  grad = (activated.array() > T(0)).select(grad, T(0));
}

template <typename T>
void add_bias(Matrix<T>& m, const Matrix<T>& bias) {
  m.colwise() += bias.col(0);
}

std::string conv_name(std::size_t i, const char* part) { return "enc.conv" + std::to_string(i) + "." + part; }
std::string deconv_name(std::size_t i, const char* part) { return "dec.deconv" + std::to_string(i) + "." + part; }

}  // namespace

ArchitectureConfig ArchitectureConfig::desk() {
  ArchitectureConfig c;
  c.image_side = 32;
  c.channels = 1;
  c.latent_dim = 6;
  c.conv_widths = {16, 16};
  c.fc_width = 64;
  return c;
}

void ArchitectureConfig::validate() const {
  if (image_side < 1) throw std::invalid_argument("model.image_side must be positive");
  if (channels < 1) throw std::invalid_argument("model.channels must be positive");
  if (latent_dim < 1) throw std::invalid_argument("model.latent_dim must be >= 1");
  if (fc_width < 1) throw std::invalid_argument("model.fc_width must be positive");
  for (int w : conv_widths) {
    if (w < 1) throw std::invalid_argument("model.conv_widths entries must be positive");
  }
  if (conv_widths.size() >= 31 || image_side % (1 << conv_widths.size()) != 0) {
    throw std::invalid_argument("model.image_side must be divisible by 2^(number of conv layers)");
  }
  likelihood.validate();
}

template <typename T>
std::size_t BasicModelParameters<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

template <typename T>
const Matrix<T>& BasicModelParameters<T>::at(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no parameter tensor named '" + std::string(name) + "'");
}

template <typename T>
Matrix<T>& BasicModelParameters<T>::at(std::string_view name) {
  return const_cast<Matrix<T>&>(std::as_const(*this).at(name));
}

template <typename T>
BasicModelParameters<T> BasicModelParameters<T>::zeros_like() const {
  BasicModelParameters out;
  out.config = config;
  for (const auto& t : tensors) out.tensors.push_back({t.name, Matrix<T>::Zero(t.value.rows(), t.value.cols())});
  return out;
}

template <typename T>
bool BasicModelParameters<T>::all_finite() const {
  for (const auto& t : tensors)
    if (!t.value.allFinite()) return false;
  return true;
}

ModelParameters init_parameters(const ArchitectureConfig& config) {
  config.validate();
  ModelParameters params;
  params.config = config;
  std::mt19937_64 rng(config.seed);

  auto add = [&](std::string name, Eigen::Index rows, Eigen::Index cols, double fan_in, double gain) {
    const double bound = gain / std::sqrt(fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix<float> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<float>(dist(rng));
    params.tensors.push_back({std::move(name), std::move(m)});
  };
  auto add_layer = [&](const std::string& prefix, Eigen::Index rows, Eigen::Index cols, double fan_in,
                       double gain = 1.0) {
    add(prefix + ".weight", rows, cols, fan_in, gain);
    add(prefix + ".bias", rows, 1, fan_in, gain);
  };

  int in_ch = config.channels;
  for (std::size_t i = 0; i < config.conv_widths.size(); ++i) {
    const int out_ch = config.conv_widths[i];
    add_layer("enc.conv" + std::to_string(i), out_ch, in_ch * kTaps, in_ch * kTaps);
    in_ch = out_ch;
  }
  const int s = config.bottleneck_side();
  const int features = in_ch * s * s;
  add_layer("enc.fc", config.fc_width, features, features);
  add_layer("enc.head", 2 * config.latent_dim, config.fc_width, config.fc_width, kHeadInitGain);

  add_layer("dec.fc", config.fc_width, config.latent_dim, config.latent_dim);
  add_layer("dec.proj", features, config.fc_width, config.fc_width);
  // Transposed conv i maps width[n-1-i] to width[n-2-i] (or the image channels for the last one).
  const std::size_t n = config.conv_widths.size();
  for (std::size_t i = 0; i < n; ++i) {
    const int cin = config.conv_widths[n - 1 - i];
    const int cout = i + 1 < n ? config.conv_widths[n - 2 - i] : config.channels;
    // Each output pixel of a stride-2 transposed conv sees cin * (kernel/stride)^2 inputs.
    const double fan_in = cin * 4.0;
    add("dec.deconv" + std::to_string(i) + ".weight", cin, cout * kTaps, fan_in, 1.0);
    add("dec.deconv" + std::to_string(i) + ".bias", cout, 1, fan_in, 1.0);
  }
  return params;
}

template <typename T>
Vae<T>::Vae(BasicModelParameters<T> params) : params_(std::move(params)) {
  params_.config.validate();
}

template <typename T>
void Vae<T>::check_images(const Matrix<T>& images) const {
  const auto& c = params_.config;
  if (images.rows() != c.pixels()) {
    std::ostringstream msg;
    msg << "image batch has " << images.rows() << " pixels per example, expected " << c.channels << "x"
        << c.image_side << "x" << c.image_side << " = " << c.pixels();
    throw std::invalid_argument(msg.str());
  }
}

template <typename T>
void Vae<T>::encode_impl(const Matrix<T>& images, ForwardTrace<T>* trace, Matrix<T>& mean,
                         Matrix<T>& log_var) const {
  check_images(images);
  const auto& c = params_.config;
  const Eigen::Index batch = images.cols();
  Matrix<T> features;
  if (c.conv_widths.empty()) {
    features = images;
  } else {
    int side = c.image_side;
    int in_ch = c.channels;
    Matrix<T> act = unflatten<T>(images, c.channels, static_cast<Eigen::Index>(side) * side);
    for (std::size_t i = 0; i < c.conv_widths.size(); ++i) {
      Matrix<T> cols = im2col<T>(act, in_ch, side, batch);
      act = params_.at(conv_name(i, "weight")) * cols;
      add_bias(act, params_.at(conv_name(i, "bias")));
      relu_inplace(act);
      if (trace) {
        trace->conv_cols.push_back(std::move(cols));
        trace->conv_out.push_back(act);
      }
      side /= 2;
      in_ch = c.conv_widths[i];
    }
    features = flatten<T>(act, static_cast<Eigen::Index>(side) * side, batch);
  }
  Matrix<T> hidden = params_.at("enc.fc.weight") * features;
  add_bias(hidden, params_.at("enc.fc.bias"));
  relu_inplace(hidden);
  Matrix<T> head = params_.at("enc.head.weight") * hidden;
  add_bias(head, params_.at("enc.head.bias"));
  mean = head.topRows(c.latent_dim);
  log_var = head.bottomRows(c.latent_dim);
  if (trace) {
    trace->enc_features = std::move(features);
    trace->enc_hidden = std::move(hidden);
  }
}

template <typename T>
Matrix<T> Vae<T>::decode_impl(const Matrix<T>& z, ForwardTrace<T>* trace) const {
  const auto& c = params_.config;
  if (z.rows() != c.latent_dim) {
    std::ostringstream msg;
    msg << "latent batch has " << z.rows() << " rows, expected latent_dim " << c.latent_dim;
    throw std::invalid_argument(msg.str());
  }
  const Eigen::Index batch = z.cols();
  Matrix<T> hidden = params_.at("dec.fc.weight") * z;
  add_bias(hidden, params_.at("dec.fc.bias"));
  relu_inplace(hidden);
  Matrix<T> proj = params_.at("dec.proj.weight") * hidden;
  add_bias(proj, params_.at("dec.proj.bias"));

  Matrix<T> logits;
  const std::size_t n = c.conv_widths.size();
  if (n == 0) {
    logits = std::move(proj);
    if (trace) {
      trace->dec_hidden = std::move(hidden);
    }
  } else {
    relu_inplace(proj);
    int side = c.bottleneck_side();
    Matrix<T> act = unflatten<T>(proj, c.conv_widths.back(), static_cast<Eigen::Index>(side) * side);
    if (trace) {
      trace->dec_hidden = std::move(hidden);
      trace->dec_projection = proj;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const int cout = i + 1 < n ? c.conv_widths[n - 2 - i] : c.channels;
      const Matrix<T>& w = params_.at(deconv_name(i, "weight"));
      Matrix<T> cols = w.transpose() * act;
      if (trace) trace->deconv_in.push_back(std::move(act));
      side *= 2;
      act = col2im<T>(cols, cout, side, batch);
      add_bias(act, params_.at(deconv_name(i, "bias")));
      if (i + 1 < n) relu_inplace(act);
      if (trace) trace->deconv_out.push_back(act);
    }
    logits = flatten<T>(act, static_cast<Eigen::Index>(side) * side, batch);
  }
  if (c.likelihood.family == LikelihoodFamily::bernoulli) {
    return logits.unaryExpr([](T v) { return T(1) / (T(1) + std::exp(-v)); });
  }
  return logits;
}

template <typename T>
void Vae<T>::encode(const Matrix<T>& images, Matrix<T>& mean, Matrix<T>& log_var) const {
  encode_impl(images, nullptr, mean, log_var);
}

template <typename T>
Matrix<T> Vae<T>::decode(const Matrix<T>& z) const {
  return decode_impl(z, nullptr);
}

template <typename T>
ForwardTrace<T> Vae<T>::forward(const Matrix<T>& images, const Matrix<T>& noise) const {
  ForwardTrace<T> trace;
  encode_impl(images, &trace, trace.mean, trace.log_var);
  if (noise.rows() != trace.mean.rows() || noise.cols() != trace.mean.cols()) {
    throw std::invalid_argument("noise shape does not match posterior batch");
  }
  trace.noise = noise;
  trace.stddev = (trace.log_var.array() * T(0.5)).exp();
  trace.z = trace.mean.array() + trace.stddev.array() * noise.array();
  trace.output = decode_impl(trace.z, &trace);
  return trace;
}

template <typename T>
BasicModelParameters<T> Vae<T>::backward(const ForwardTrace<T>& trace, const Matrix<T>& d_mean,
                                         const Matrix<T>& d_log_var, const Matrix<T>& d_output) const {
  const auto& c = params_.config;
  const Eigen::Index batch = trace.z.cols();
  BasicModelParameters<T> grads = params_.zeros_like();

  // Decoder output activation.
  Matrix<T> d_logits;
  if (c.likelihood.family == LikelihoodFamily::bernoulli) {
    d_logits = d_output.array() * trace.output.array() * (T(1) - trace.output.array());
  } else {
    d_logits = d_output;
  }

  Matrix<T> d_proj;
  const std::size_t n = c.conv_widths.size();
  if (n == 0) {
    d_proj = std::move(d_logits);
  } else {
    int side = c.image_side;
    Matrix<T> d_act = unflatten<T>(d_logits, c.channels, static_cast<Eigen::Index>(side) * side);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = n - 1 - r;
      if (i + 1 < n) relu_mask(d_act, trace.deconv_out[i]);
      grads.at(deconv_name(i, "bias")) = d_act.rowwise().sum();
      Matrix<T> d_cols = im2col<T>(d_act, static_cast<int>(d_act.rows()), side, batch);
      const Matrix<T>& w = params_.at(deconv_name(i, "weight"));
      grads.at(deconv_name(i, "weight")).noalias() = trace.deconv_in[i] * d_cols.transpose();
      d_act.noalias() = w * d_cols;
      side /= 2;
    }
    d_proj = flatten<T>(d_act, static_cast<Eigen::Index>(side) * side, batch);
    relu_mask(d_proj, trace.dec_projection);
  }
  grads.at("dec.proj.bias") = d_proj.rowwise().sum();
  grads.at("dec.proj.weight").noalias() = d_proj * trace.dec_hidden.transpose();
  Matrix<T> d_hidden = params_.at("dec.proj.weight").transpose() * d_proj;
  relu_mask(d_hidden, trace.dec_hidden);
  grads.at("dec.fc.bias") = d_hidden.rowwise().sum();
  grads.at("dec.fc.weight").noalias() = d_hidden * trace.z.transpose();
  Matrix<T> d_z = params_.at("dec.fc.weight").transpose() * d_hidden;

  // Reparametrization: z = mean + exp(log_var / 2) * noise.
  Matrix<T> d_head(2 * c.latent_dim, batch);
  d_head.topRows(c.latent_dim) = d_mean + d_z;
  d_head.bottomRows(c.latent_dim) =
      d_log_var.array() + d_z.array() * trace.noise.array() * trace.stddev.array() * T(0.5);

  grads.at("enc.head.bias") = d_head.rowwise().sum();
  grads.at("enc.head.weight").noalias() = d_head * trace.enc_hidden.transpose();
  Matrix<T> d_enc_hidden = params_.at("enc.head.weight").transpose() * d_head;
  relu_mask(d_enc_hidden, trace.enc_hidden);
  grads.at("enc.fc.bias") = d_enc_hidden.rowwise().sum();
  grads.at("enc.fc.weight").noalias() = d_enc_hidden * trace.enc_features.transpose();

  if (n > 0) {
    Matrix<T> d_features = params_.at("enc.fc.weight").transpose() * d_enc_hidden;
    int side = c.bottleneck_side();
    Matrix<T> d_act = unflatten<T>(d_features, c.conv_widths.back(), static_cast<Eigen::Index>(side) * side);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = n - 1 - r;
      relu_mask(d_act, trace.conv_out[i]);
      grads.at(conv_name(i, "bias")) = d_act.rowwise().sum();
      grads.at(conv_name(i, "weight")).noalias() = d_act * trace.conv_cols[i].transpose();
      side *= 2;
      if (i > 0) {
        Matrix<T> d_cols = params_.at(conv_name(i, "weight")).transpose() * d_act;
        d_act = col2im<T>(d_cols, c.conv_widths[i - 1], side, batch);
      }
    }
  }
  return grads;
}

template struct BasicModelParameters<float>;
template struct BasicModelParameters<double>;
template class Vae<float>;
template class Vae<double>;

PosteriorBatch encode(const ModelParameters& params, const Eigen::MatrixXf& images) {
  Vae<float> vae(params);
  Matrix<float> mean, log_var;
  vae.encode(images, mean, log_var);
  return {mean.cast<double>(), log_var.cast<double>()};
}

Eigen::MatrixXd decode(const ModelParameters& params, const Eigen::MatrixXd& z) {
  Vae<float> vae(params);
  return vae.decode(z.cast<float>()).cast<double>();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'B', 'A', 'V', 'A', 'E', 'C', 'K', '1'};

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return v;
}

nlohmann::json config_to_json(const ArchitectureConfig& c) {
  return {{"image_side", c.image_side},
          {"channels", c.channels},
          {"latent_dim", c.latent_dim},
          {"conv_widths", c.conv_widths},
          {"fc_width", c.fc_width},
          {"seed", c.seed},
          {"likelihood", to_string(c.likelihood.family)},
          {"gaussian_variance", c.likelihood.gaussian_variance}};
}

ArchitectureConfig config_from_json(const nlohmann::json& j) {
  ArchitectureConfig c;
  c.image_side = j.at("image_side").get<int>();
  c.channels = j.at("channels").get<int>();
  c.latent_dim = j.at("latent_dim").get<int>();
  c.conv_widths = j.at("conv_widths").get<std::vector<int>>();
  c.fc_width = j.at("fc_width").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.likelihood.family = likelihood_family_from_string(j.at("likelihood").get<std::string>());
  c.likelihood.gaussian_variance = j.at("gaussian_variance").get<double>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params, std::int64_t step) {
  nlohmann::json header;
  header["format"] = "bavae-checkpoint";
  header["version"] = 1;
  header["step"] = step;
  header["config"] = config_to_json(params.config);
  std::uint64_t offset = 0;
  for (const auto& t : params.tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", {t.value.rows(), t.value.cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.size()) * sizeof(float);
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors) {
    // Column-major element order.
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(t.value.data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path.string());
  }
  const std::uint64_t header_size = read_u64(in);
  if (!in || header_size > (1u << 26)) throw std::runtime_error("corrupt checkpoint header: " + path.string());
  std::string text(header_size, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_size));
  const auto header = nlohmann::json::parse(text);

  Checkpoint ck;
  ck.step = header.at("step").get<std::int64_t>();
  ck.params.config = config_from_json(header.at("config"));
  const ModelParameters expected = init_parameters(ck.params.config);
  const auto& entries = header.at("tensors");
  if (entries.size() != expected.tensors.size()) {
    throw std::runtime_error("checkpoint tensor count does not match its architecture");
  }
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const auto& e = entries[k];
    const auto name = e.at("name").get<std::string>();
    const auto rows = e.at("shape")[0].get<Eigen::Index>();
    const auto cols = e.at("shape")[1].get<Eigen::Index>();
    const auto& ref = expected.tensors[k];
    if (name != ref.name || rows != ref.value.rows() || cols != ref.value.cols()) {
      throw std::runtime_error("checkpoint tensor '" + name + "' does not match the architecture");
    }
    Matrix<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      m.data()[i] = std::bit_cast<float>(to_little_endian(bits));
    }
    ck.params.tensors.push_back({name, std::move(m)});
  }
  if (!in) throw std::runtime_error("truncated checkpoint: " + path.string());
  if (!ck.params.all_finite()) throw std::runtime_error("checkpoint contains non-finite parameters");
  return ck;
}

}  // namespace bavae
