#include "harnet/model.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "harnet/error.hpp"
#include "harnet/keyvalue.hpp"

namespace harnet {

void ModelSpec::validate() const {
  if (low_level_channels < 1 || block_count < 1 || layers_per_block < 1 || block_channels < 1) {
    throw data_error("model spec counts must all be >= 1");
  }
  if (kernel != 3) throw data_error("model spec kernel must be 3");
}

std::vector<int> ModelSpec::block_input_widths() const {
  std::vector<int> widths{low_level_channels};
  for (int b = 1; b < block_count; ++b) widths.push_back(block_channels + widths.back());
  return widths;
}

int ModelSpec::residual_input_width() const { return block_channels + block_input_widths().back(); }

namespace {

ConvLayer make_layer(std::string name, int out, int in, bool relu) {
  return {std::move(name), nn::Tensor::zeros({out, in, 3, 3}, true), nn::Tensor::zeros({out}, true), relu};
}

std::vector<ConvLayer> wire_layers(const ModelSpec& spec) {
  spec.validate();
  std::vector<ConvLayer> layers;
  layers.push_back(make_layer("stem", spec.low_level_channels, 1, true));
  const auto widths = spec.block_input_widths();
  for (int b = 0; b < spec.block_count; ++b) {
    int in = widths[b];
    for (int l = 0; l < spec.layers_per_block; ++l) {
      layers.push_back(make_layer("block" + std::to_string(b + 1) + ".conv" + std::to_string(l + 1),
                                  spec.block_channels, in, true));
      in = spec.block_channels;
    }
  }
  layers.push_back(make_layer("residual", 1, spec.residual_input_width(), false));
  return layers;
}

}  // namespace

Model Model::zeros(const ModelSpec& spec) { return Model(spec, wire_layers(spec)); }

Model Model::build(const ModelSpec& spec, std::uint64_t seed) {
  Model model = zeros(spec);
  std::mt19937_64 rng(seed);
  for (auto& layer : model.layers_) {
    const int fan_in = layer.weight.dim(1) * 9;
    const double gain = layer.relu ? std::sqrt(2.0) : 1.0;
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    for (float& v : layer.weight.mutable_data()) v = static_cast<float>(dist(rng));
  }
  model.metadata.seed = seed;
  return model;
}

std::vector<nn::Tensor> Model::parameters() const {
  std::vector<nn::Tensor> params;
  for (const auto& l : layers_) {
    params.push_back(l.weight);
    params.push_back(l.bias);
  }
  return params;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.numel() + l.bias.numel();
  return n;
}

namespace {

template <class T>
nn::BasicTensor<T> apply(const nn::BasicTensor<T>& w, const nn::BasicTensor<T>& b, bool relu,
                         const nn::BasicTensor<T>& x) {
  auto y = nn::conv2d(x, w, b);
  return relu ? nn::relu(y) : y;
}

nn::Tensor apply(const ConvLayer& layer, const nn::Tensor& x) { return apply(layer.weight, layer.bias, layer.relu, x); }

template <class T>
nn::BasicTensor<T> wire(const ModelSpec& spec, const std::vector<nn::BasicTensor<T>>& params,
                        const nn::BasicTensor<T>& x) {
  if (x.shape().size() != 4 || x.dim(1) != 1) {
    throw data_error("model input must be (N, 1, H, W), got " + nn::shape_string(x.shape()));
  }
  std::size_t k = 0;
  auto next = [&](bool relu, const nn::BasicTensor<T>& in) {
    auto y = apply(params[2 * k], params[2 * k + 1], relu, in);
    ++k;
    return y;
  };
  auto block_in = next(true, x);
  for (int b = 0; b < spec.block_count; ++b) {
    auto h = block_in;
    for (int l = 0; l < spec.layers_per_block; ++l) h = next(true, h);
    block_in = nn::concat_channels(h, block_in);
  }
  return nn::add(next(false, block_in), x);
}

}  // namespace

nn::Tensor Model::forward(const nn::Tensor& x) const { return wire(spec_, parameters(), x); }

nn::Tensor64 forward_with(const ModelSpec& spec, const std::vector<nn::Tensor64>& params, const nn::Tensor64& x) {
  spec.validate();
  const std::size_t expected = 2 * (2 + static_cast<std::size_t>(spec.block_count) * spec.layers_per_block);
  if (params.size() != expected) {
    throw data_error("expected " + std::to_string(expected) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  return wire(spec, params, x);
}

std::vector<int> Model::traced_widths(const nn::Tensor& x) const {
  nn::NoGradGuard guard;
  std::vector<int> widths;
  std::size_t k = 0;
  nn::Tensor block_in = apply(layers_[k++], x);
  for (int b = 0; b < spec_.block_count; ++b) {
    widths.push_back(block_in.dim(1));
    nn::Tensor h = block_in;
    for (int l = 0; l < spec_.layers_per_block; ++l) h = apply(layers_[k++], h);
    block_in = nn::concat_channels(h, block_in);
  }
  widths.push_back(block_in.dim(1));
  return widths;
}

void Model::zero_residual_layer() {
  auto& r = layers_.back();
  std::fill(r.weight.mutable_data().begin(), r.weight.mutable_data().end(), 0.0f);
  std::fill(r.bias.mutable_data().begin(), r.bias.mutable_data().end(), 0.0f);
}

std::vector<float> reconstruct_unclamped(const Model& model, const Angiogram& img) {
  if (img.scale() != IntensityScale::Unit) throw data_error("reconstruct expects a Unit-scale image");
  if (img.height() < 3 || img.width() < 3) throw data_error("reconstruct needs an image of at least 3x3");
  nn::NoGradGuard guard;
  std::vector<float> data(img.pixels().begin(), img.pixels().end());
  auto x = nn::Tensor::from_data({1, 1, img.height(), img.width()}, std::move(data));
  auto y = model.forward(x);
  return std::vector<float>(y.data().begin(), y.data().end());
}

Angiogram reconstruct(const Model& model, const Angiogram& img) {
  const auto y = reconstruct_unclamped(model, img);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = std::isfinite(y[i]) ? std::clamp<double>(y[i], 0.0, 1.0) : 0.0;
  return img.with_pixels(std::move(out));
}

// -- checkpoint ------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'H', 'A', 'R', 'N'};

std::uint32_t crc_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void put_tensor(std::string& out, const std::string& name, const nn::Tensor& t) {
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
  for (int d : t.shape()) binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) binio::put(out, v);
}

void read_tensor(binio::Reader& in, const std::string& expected_name, nn::Tensor& t, const std::string& origin) {
  const auto name_len = in.get<std::uint32_t>();
  const std::string name(in.bytes(name_len));
  if (name != expected_name) {
    throw data_error(origin + ": expected tensor '" + expected_name + "', found '" + name + "'");
  }
  const auto rank = in.get<std::uint32_t>();
  nn::Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(in.get<std::uint32_t>()));
  if (shape != t.shape()) {
    throw data_error(origin + ": shape mismatch for '" + name + "': file " + nn::shape_string(shape) + ", spec " +
                     nn::shape_string(t.shape()));
  }
  for (float& v : t.mutable_data()) v = in.get<float>();
}

}  // namespace

std::string serialize_checkpoint(const Model& model) {
  const auto& spec = model.spec();
  std::string out(kMagic, 4);
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {spec.low_level_channels, spec.block_count, spec.layers_per_block, spec.block_channels, spec.kernel}) {
    binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  binio::put<std::uint32_t>(out, model.metadata.epochs);
  binio::put<std::uint64_t>(out, model.metadata.seed);
  binio::put<double>(out, model.metadata.final_loss);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(model.layers().size() * 2));
  for (const auto& l : model.layers()) {
    put_tensor(out, l.name + ".weight", l.weight);
    put_tensor(out, l.name + ".bias", l.bias);
  }
  binio::put<std::uint32_t>(out, crc_of(out));
  return out;
}

Model deserialize_checkpoint(std::string_view bytes, const std::string& origin) {
  binio::Reader in(bytes, origin);
  if (in.bytes(4) != std::string_view(kMagic, 4)) throw data_error(origin + ": magic mismatch (not a checkpoint)");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw data_error(origin + ": unsupported checkpoint version " + std::to_string(version));
  }
  if (bytes.size() < 8) throw data_error(origin + ": truncated file");
  const std::uint32_t stored_crc = [&] {
    binio::Reader tail(bytes.substr(bytes.size() - 4), origin);
    return tail.get<std::uint32_t>();
  }();
  ModelSpec spec;
  spec.low_level_channels = static_cast<int>(in.get<std::uint32_t>());
  spec.block_count = static_cast<int>(in.get<std::uint32_t>());
  spec.layers_per_block = static_cast<int>(in.get<std::uint32_t>());
  spec.block_channels = static_cast<int>(in.get<std::uint32_t>());
  spec.kernel = static_cast<int>(in.get<std::uint32_t>());
  spec.validate();
  TrainingMetadata meta;
  meta.epochs = in.get<std::uint32_t>();
  meta.seed = in.get<std::uint64_t>();
  meta.final_loss = in.get<double>();
  Model model = Model::zeros(spec);
  const auto count = in.get<std::uint32_t>();
  if (count != model.layers().size() * 2) {
    throw data_error(origin + ": tensor count " + std::to_string(count) + " does not match spec");
  }
  for (auto& l : model.layers()) {
    read_tensor(in, l.name + ".weight", l.weight, origin);
    read_tensor(in, l.name + ".bias", l.bias, origin);
  }
  const std::size_t body = in.position();
  if (in.remaining() != 4) throw data_error(origin + ": unexpected trailing bytes");
  if (crc_of(bytes.substr(0, body)) != stored_crc) throw data_error(origin + ": CRC mismatch");
  model.metadata = meta;
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace harnet
