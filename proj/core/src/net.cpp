#include "fcns/net.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

#include "fcns/error.hpp"
#include "fcns/loss.hpp"
#include "fcns/rng.hpp"

namespace fcns::net {

using nlohmann::json;

namespace {

constexpr double kBnEps = 1e-5;

}  // namespace

NetConfig NetConfig::resnet34(int num_classes) {
  NetConfig c;
  c.num_classes = num_classes;
  return c;
}

NetConfig NetConfig::desk(int num_classes) {
  NetConfig c;
  c.stage_blocks = {1, 1, 1, 1};
  c.stage_channels = {8, 16, 32, 64};
  c.num_classes = num_classes;
  return c;
}

void NetConfig::validate() const {
  for (int i = 0; i < 4; ++i) {
    if (stage_blocks[i] < 1) {
      raise(ErrorKind::kConfig, "stage " + std::to_string(i + 1) +
                                    " must have at least one block");
    }
    if (stage_channels[i] < 1) {
      raise(ErrorKind::kConfig, "stage " + std::to_string(i + 1) +
                                    " must have at least one channel");
    }
  }
  if (input_channels < 1) raise(ErrorKind::kConfig, "input_channels must be >= 1");
  if (num_classes < 2) raise(ErrorKind::kConfig, "num_classes must be >= 2");
}

json to_json(const NetConfig& c) {
  return {{"stage_blocks", c.stage_blocks},
          {"stage_channels", c.stage_channels},
          {"input_channels", c.input_channels},
          {"num_classes", c.num_classes},
          {"stem_pool", c.stem_pool}};
}

NetConfig net_config_from_json(const json& j) {
  NetConfig c;
  try {
    if (j.contains("profile")) {
      const auto profile = j["profile"].get<std::string>();
      if (profile == "desk") {
        c = NetConfig::desk(c.num_classes);
      } else if (profile != "resnet34") {
        raise(ErrorKind::kConfig, "unknown net profile '" + profile + "'");
      }
    }
    if (j.contains("stage_blocks")) {
      c.stage_blocks = j["stage_blocks"].get<std::array<int, 4>>();
    }
    if (j.contains("stage_channels")) {
      c.stage_channels = j["stage_channels"].get<std::array<int, 4>>();
    }
    c.input_channels = j.value("input_channels", c.input_channels);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.stem_pool = j.value("stem_pool", c.stem_pool);
  } catch (const json::exception& e) {
    raise(ErrorKind::kParse, std::string("net config: ") + e.what());
  }
  c.validate();
  return c;
}

bool is_buffer(const std::string& name) {
  auto ends_with = [&](std::string_view suffix) {
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  return ends_with(".running_mean") || ends_with(".running_var");
}

namespace {

struct ConvGeom {
  int cin = 0;
  int cout = 0;
  int k = 0;
  int stride = 1;
  int pad = 0;

  int fan_in() const { return cin * k * k; }
};

int conv_out(int in, const ConvGeom& g) {
  return (in + 2 * g.pad - g.k) / g.stride + 1;
}

struct BlockDef {
  std::string prefix;
  ConvGeom conv1;
  ConvGeom conv2;
  bool has_shortcut = false;
  ConvGeom shortcut;
};

ConvGeom stem_geom(const NetConfig& c) {
  return {c.input_channels, c.stage_channels[0], 7, 2, 3};
}

std::vector<BlockDef> block_defs(const NetConfig& c) {
  std::vector<BlockDef> defs;
  int cin = c.stage_channels[0];
  for (int s = 0; s < 4; ++s) {
    const int width = c.stage_channels[s];
    for (int b = 0; b < c.stage_blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      BlockDef d;
      d.prefix = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      d.conv1 = {cin, width, 3, stride, 1};
      d.conv2 = {width, width, 3, 1, 1};
      d.has_shortcut = stride != 1 || cin != width;
      d.shortcut = {cin, width, 1, stride, 0};
      defs.push_back(d);
      cin = width;
    }
  }
  return defs;
}

void add_conv(std::vector<ParameterSpec>& out, const std::string& name,
              const ConvGeom& g) {
  out.push_back({name, {g.cout, g.cin, g.k, g.k}, true});
}

void add_bn(std::vector<ParameterSpec>& out, const std::string& prefix,
            int channels) {
  out.push_back({prefix + ".weight", {channels}, true});
  out.push_back({prefix + ".bias", {channels}, true});
  out.push_back({prefix + ".running_mean", {channels}, false});
  out.push_back({prefix + ".running_var", {channels}, false});
}

std::size_t element_count(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

}  // namespace

std::vector<ParameterSpec> parameter_layout(const NetConfig& config) {
  config.validate();
  std::vector<ParameterSpec> out;
  add_conv(out, "stem.conv.weight", stem_geom(config));
  add_bn(out, "stem.bn", config.stage_channels[0]);
  for (const auto& d : block_defs(config)) {
    add_conv(out, d.prefix + ".conv1.weight", d.conv1);
    add_bn(out, d.prefix + ".bn1", d.conv1.cout);
    add_conv(out, d.prefix + ".conv2.weight", d.conv2);
    add_bn(out, d.prefix + ".bn2", d.conv2.cout);
    if (d.has_shortcut) {
      add_conv(out, d.prefix + ".shortcut.conv.weight", d.shortcut);
      add_bn(out, d.prefix + ".shortcut.bn", d.shortcut.cout);
    }
  }
  out.push_back(
      {"fc.weight", {config.num_classes, config.feature_channels()}, true});
  out.push_back({"fc.bias", {config.num_classes}, true});
  return out;
}

std::size_t count_parameters(const NetConfig& config, bool include_buffers) {
  std::size_t total = 0;
  for (const auto& spec : parameter_layout(config)) {
    if (spec.trainable || include_buffers) total += element_count(spec.shape);
  }
  return total;
}

ParameterSet build_model(const NetConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  ParameterSet params;
  for (const auto& spec : parameter_layout(config)) {
    Array<float> a;
    a.shape = spec.shape;
    a.values.assign(element_count(spec.shape), 0.0f);
    const auto& name = spec.name;
    auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() &&
             name.compare(name.size() - suffix.size(), suffix.size(), suffix) ==
                 0;
    };
    if (spec.shape.size() == 4) {
      const double fan_in =
          static_cast<double>(spec.shape[1]) * spec.shape[2] * spec.shape[3];
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : a.values) v = static_cast<float>(rng.normal() * sd);
    } else if (name == "fc.weight") {
      const double sd = 1.0 / std::sqrt(static_cast<double>(spec.shape[1]));
      for (auto& v : a.values) v = static_cast<float>(rng.normal() * sd);
    } else if (ends_with(".running_var") ||
               (ends_with(".weight") && spec.shape.size() == 1)) {
      std::fill(a.values.begin(), a.values.end(), 1.0f);
    }
    params.emplace(name, std::move(a));
  }
  return params;
}

void check_parameters(const NetConfig& config, const ParameterSet& params) {
  const auto layout = parameter_layout(config);
  if (layout.size() != params.size()) {
    raise(ErrorKind::kShape, "parameter set has " +
                                 std::to_string(params.size()) +
                                 " entries, configuration expects " +
                                 std::to_string(layout.size()));
  }
  for (const auto& spec : layout) {
    auto it = params.find(spec.name);
    if (it == params.end()) {
      raise(ErrorKind::kShape, "missing parameter " + spec.name);
    }
    if (it->second.shape != spec.shape ||
        it->second.values.size() != element_count(spec.shape)) {
      raise(ErrorKind::kShape, "parameter " + spec.name + " has wrong shape");
    }
  }
}

Batch stack(std::span<const Planar> samples) {
  if (samples.empty()) raise(ErrorKind::kShape, "cannot stack an empty batch");
  Batch b;
  b.n = static_cast<int>(samples.size());
  b.channels = samples[0].channels;
  b.height = samples[0].height;
  b.width = samples[0].width;
  b.values.reserve(b.sample_size() * b.n);
  for (const auto& s : samples) {
    if (s.channels != b.channels || s.height != b.height || s.width != b.width) {
      raise(ErrorKind::kShape, "batch samples differ in shape");
    }
    b.values.insert(b.values.end(), s.values.begin(), s.values.end());
  }
  return b;
}

Batch single(const Planar& sample) {
  return stack(std::span<const Planar>(&sample, 1));
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Feature {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> v;

  void reset(int n_, int c_, int h_, int w_) {
    n = n_;
    c = c_;
    h = h_;
    w = w_;
    v.assign(static_cast<std::size_t>(n) * c * h * w, T(0));
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t per_sample() const { return plane() * c; }
  T* sample(int i) { return v.data() + i * per_sample(); }
  const T* sample(int i) const { return v.data() + i * per_sample(); }
};

inline int floor_div(int a, int b) {
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}
inline int ceil_div(int a, int b) { return -floor_div(-a, b); }

// Column matrix for output rows [oy0, oy1): (cin*k*k) x ((oy1-oy0)*ow).
// Splits every row into its even then its odd columns, so stride-2 reads
// become contiguous. Row length stays w.
template <typename T>
void deinterleave_rows(const T* in, int rows, int w, std::vector<T>& out) {
  out.resize(static_cast<std::size_t>(rows) * w);
  const int even = (w + 1) / 2;
  for (int r = 0; r < rows; ++r) {
    const T* src = in + static_cast<std::size_t>(r) * w;
    T* dst = out.data() + static_cast<std::size_t>(r) * w;
    for (int x = 0; x < even; ++x) dst[x] = src[2 * x];
    for (int x = 0; x < w / 2; ++x) dst[even + x] = src[2 * x + 1];
  }
}

// `split` is the deinterleaved input when g.stride == 2, else null.
template <typename T>
void im2col(const T* in, const T* split, int h, int w, const ConvGeom& g,
            int ow, int oy0, int oy1, T* col) {
  const std::size_t p = static_cast<std::size_t>(oy1 - oy0) * ow;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci * g.k + ky) * g.k + kx) * p;
        // Output columns whose input column lies inside the image.
        const int shift = kx - g.pad;
        const int lo = std::clamp(ceil_div(-shift, g.stride), 0, ow);
        const int hi = std::clamp(floor_div(w - 1 - shift, g.stride) + 1, lo, ow);
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy - oy0) * ow;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, ow, T(0));
            continue;
          }
          const std::size_t row_start = (static_cast<std::size_t>(ci) * h + iy) * w;
          const T* src = in + row_start + shift;
          std::fill_n(dst, lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else if (split) {
            // ix = 2*ox + shift lives in the even half when shift is even.
            const int parity = shift & 1;
            const T* half = split + row_start + (parity ? (w + 1) / 2 : 0) +
                            floor_div(shift - parity, 2);
            std::copy(half + lo, half + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + hi, dst + ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int h, int w, const ConvGeom& g, int ow, int oy0,
            int oy1, T* out) {
  const std::size_t p = static_cast<std::size_t>(oy1 - oy0) * ow;
  for (int ci = 0; ci < g.cin; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row =
            col + (static_cast<std::size_t>(ci * g.k + ky) * g.k + kx) * p;
        const int shift = kx - g.pad;
        const int lo = std::clamp(ceil_div(-shift, g.stride), 0, ow);
        const int hi = std::clamp(floor_div(w - 1 - shift, g.stride) + 1, lo, ow);
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::size_t>(oy - oy0) * ow;
          T* dst = out + (static_cast<std::size_t>(ci) * h + iy) * w + shift;
          for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

// Output rows per im2col chunk, keeping the column buffer cache-sized.
inline int chunk_rows(int k, int ow, int oh) {
  constexpr std::size_t kTargetElements = 1 << 15;
  const std::size_t per_row = static_cast<std::size_t>(k) * ow;
  return std::clamp(static_cast<int>(kTargetElements / std::max<std::size_t>(per_row, 1)),
                    1, oh);
}

template <typename T>
using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

template <typename T>
void conv_forward(const Feature<T>& in, const T* weight, const ConvGeom& g,
                  Feature<T>& out, std::vector<T>& col) {
  const int oh = conv_out(in.h, g);
  const int ow = conv_out(in.w, g);
  if (oh < 1 || ow < 1) {
    raise(ErrorKind::kShape, "input too small for the network's stride schedule");
  }
  out.reset(in.n, g.cout, oh, ow);
  const int k = g.fan_in();
  const int p = oh * ow;
  const int rows = chunk_rows(k, ow, oh);
  col.resize(static_cast<std::size_t>(k) * rows * ow);
  Eigen::Map<const RowMat<T>> wm(weight, g.cout, k);
  std::vector<T> split;
  for (int i = 0; i < in.n; ++i) {
    if (g.stride == 2) deinterleave_rows(in.sample(i), in.c * in.h, in.w, split);
    const T* sp = g.stride == 2 ? split.data() : nullptr;
    for (int oy0 = 0; oy0 < oh; oy0 += rows) {
      const int oy1 = std::min(oh, oy0 + rows);
      const int pc = (oy1 - oy0) * ow;
      im2col(in.sample(i), sp, in.h, in.w, g, ow, oy0, oy1, col.data());
      Eigen::Map<const RowMat<T>> cm(col.data(), k, pc);
      StridedMap<T> om(out.sample(i) + static_cast<std::size_t>(oy0) * ow, g.cout,
                       pc, Eigen::OuterStride<>(p));
      om.noalias() = wm * cm;
    }
  }
}

// Accumulates dL/dW into dweight (double) and, when din is given, adds
// dL/dinput into it.
template <typename T>
void conv_backward(const Feature<T>& in, const T* weight, const ConvGeom& g,
                   const Feature<T>& dout, double* dweight, Feature<T>* din,
                   std::vector<T>& col) {
  const int oh = dout.h;
  const int ow = dout.w;
  const int k = g.fan_in();
  const int p = oh * ow;
  const int rows = chunk_rows(k, ow, oh);
  col.resize(static_cast<std::size_t>(k) * rows * ow * (din ? 2 : 1));
  T* dcol = col.data() + static_cast<std::size_t>(k) * rows * ow;
  Eigen::Map<const RowMat<T>> wm(weight, g.cout, k);
  RowMat<T> dw_sample(g.cout, k);
  std::vector<T> split;
  for (int i = 0; i < in.n; ++i) {
    dw_sample.setZero();
    if (g.stride == 2) deinterleave_rows(in.sample(i), in.c * in.h, in.w, split);
    const T* sp = g.stride == 2 ? split.data() : nullptr;
    for (int oy0 = 0; oy0 < oh; oy0 += rows) {
      const int oy1 = std::min(oh, oy0 + rows);
      const int pc = (oy1 - oy0) * ow;
      im2col(in.sample(i), sp, in.h, in.w, g, ow, oy0, oy1, col.data());
      Eigen::Map<const RowMat<T>> cm(col.data(), k, pc);
      ConstStridedMap<T> dom(dout.sample(i) + static_cast<std::size_t>(oy0) * ow,
                             g.cout, pc, Eigen::OuterStride<>(p));
      dw_sample.noalias() += dom * cm.transpose();
      if (din) {
        Eigen::Map<RowMat<T>> dcm(dcol, k, pc);
        dcm.noalias() = wm.transpose() * dom;
        col2im(dcol, in.h, in.w, g, ow, oy0, oy1, din->sample(i));
      }
    }
    const T* src = dw_sample.data();
    for (std::size_t j = 0; j < static_cast<std::size_t>(g.cout) * k; ++j) {
      dweight[j] += static_cast<double>(src[j]);
    }
  }
}

template <typename T>
struct BnParams {
  const T* gamma;
  const T* beta;
  const T* running_mean;
  const T* running_var;
};

template <typename T>
struct BnCache {
  std::vector<T> xhat;
  std::vector<double> inv_std;
  std::vector<double> mean;
  std::vector<double> var;
  std::size_t count = 0;  // elements per channel
};

template <typename T>
void bn_forward(Feature<T>& x, const BnParams<T>& p, bool training,
                BnCache<T>& cache) {
  const int channels = x.c;
  const std::size_t plane = x.plane();
  const std::size_t m = plane * x.n;
  cache.xhat.resize(x.v.size());
  cache.inv_std.assign(channels, 0.0);
  cache.mean.assign(channels, 0.0);
  cache.var.assign(channels, 0.0);
  cache.count = m;
  for (int c = 0; c < channels; ++c) {
    double mean = 0.0;
    double var = 0.0;
    if (training) {
      double sum = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* src = x.sample(i) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) sum += src[j];
      }
      mean = sum / static_cast<double>(m);
      double sq = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* src = x.sample(i) + c * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          const double d = src[j] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<double>(m);
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double inv_std = 1.0 / std::sqrt(var + kBnEps);
    cache.mean[c] = mean;
    cache.var[c] = var;
    cache.inv_std[c] = inv_std;
    const double gamma = p.gamma[c];
    const double beta = p.beta[c];
    for (int i = 0; i < x.n; ++i) {
      T* data = x.sample(i) + c * plane;
      T* xh = cache.xhat.data() + i * x.per_sample() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        const double normalized = (data[j] - mean) * inv_std;
        xh[j] = static_cast<T>(normalized);
        data[j] = static_cast<T>(gamma * normalized + beta);
      }
    }
  }
}

// In place: dy becomes dx.
template <typename T>
void bn_backward(Feature<T>& dy, const BnCache<T>& cache, const T* gamma,
                 bool training, double* dgamma, double* dbeta) {
  const std::size_t plane = dy.plane();
  const double m = static_cast<double>(cache.count);
  for (int c = 0; c < dy.c; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const T* d = dy.sample(i) + c * plane;
      const T* xh = cache.xhat.data() + i * dy.per_sample() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_dy += d[j];
        sum_dy_xhat += static_cast<double>(d[j]) * xh[j];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const double g = gamma[c];
    const double inv_std = cache.inv_std[c];
    for (int i = 0; i < dy.n; ++i) {
      T* d = dy.sample(i) + c * plane;
      const T* xh = cache.xhat.data() + i * dy.per_sample() + c * plane;
      if (training) {
        const double scale = g * inv_std / m;
        for (std::size_t j = 0; j < plane; ++j) {
          d[j] = static_cast<T>(scale *
                                (m * d[j] - sum_dy - xh[j] * sum_dy_xhat));
        }
      } else {
        const double scale = g * inv_std;
        for (std::size_t j = 0; j < plane; ++j) {
          d[j] = static_cast<T>(scale * d[j]);
        }
      }
    }
  }
}

template <typename T>
void relu(Feature<T>& x) {
  for (auto& v : x.v) v = v > T(0) ? v : T(0);
}

template <typename T>
void relu_backward(Feature<T>& dy, const Feature<T>& out) {
  for (std::size_t i = 0; i < dy.v.size(); ++i) {
    if (!(out.v[i] > T(0))) dy.v[i] = T(0);
  }
}

// 3x3, stride 2, padding 1.
template <typename T>
void maxpool_forward(const Feature<T>& in, Feature<T>& out,
                     std::vector<int>& argmax) {
  const int oh = (in.h + 2 - 3) / 2 + 1;
  const int ow = (in.w + 2 - 3) / 2 + 1;
  out.reset(in.n, in.c, oh, ow);
  argmax.assign(out.v.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < in.n; ++i) {
    for (int c = 0; c < in.c; ++c) {
      const T* src = in.sample(i) + c * in.plane();
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          int best_idx = 0;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * 2 - 1 + ky;
            if (iy < 0 || iy >= in.h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox * 2 - 1 + kx;
              if (ix < 0 || ix >= in.w) continue;
              const T v = src[iy * in.w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * in.w + ix;
              }
            }
          }
          out.v[o] = best;
          argmax[o] = best_idx;
        }
      }
    }
  }
}

template <typename T>
void maxpool_backward(const Feature<T>& dout, const std::vector<int>& argmax,
                      Feature<T>& din) {
  std::size_t o = 0;
  for (int i = 0; i < dout.n; ++i) {
    for (int c = 0; c < dout.c; ++c) {
      T* dst = din.sample(i) + c * din.plane();
      for (std::size_t j = 0; j < dout.plane(); ++j, ++o) {
        dst[argmax[o]] += dout.v[o];
      }
    }
  }
}

template <typename T>
struct BlockTape {
  BnCache<T> bn1;
  BnCache<T> bn2;
  BnCache<T> bn_shortcut;
  Feature<T> a1;   // relu(bn1(conv1(x)))
  Feature<T> out;  // relu(bn2(conv2(a1)) + shortcut(x))
};

template <typename T>
struct Tape {
  bool training = false;
  Feature<T> input;
  BnCache<T> stem_bn;
  Feature<T> stem;    // after ReLU
  Feature<T> pooled;  // after max pool (copy of stem without pooling)
  std::vector<int> pool_argmax;
  std::vector<BlockTape<T>> blocks;
  std::vector<double> gap;     // N x C
  std::vector<double> logits;  // N x classes

  const Feature<T>& block_input(std::size_t b) const {
    return b == 0 ? pooled : blocks[b - 1].out;
  }
  const Feature<T>& last() const { return blocks.back().out; }
};

template <typename T>
class Engine {
 public:
  Engine(const NetConfig& config, const ParameterSet& params)
      : config_(config), params_(params), blocks_(block_defs(config)) {
    check_parameters(config, params);
    if constexpr (!std::is_same_v<T, float>) {
      for (const auto& [name, array] : params) {
        converted_[name].assign(array.values.begin(), array.values.end());
      }
    }
  }

  Tape<T> forward(const Batch& batch, bool training) const {
    if (batch.n < 1) raise(ErrorKind::kShape, "empty batch");
    if (batch.channels != config_.input_channels) {
      raise(ErrorKind::kShape, "batch has " + std::to_string(batch.channels) +
                                   " channels, network expects " +
                                   std::to_string(config_.input_channels));
    }
    if (batch.values.size() != batch.sample_size() * batch.n) {
      raise(ErrorKind::kShape, "batch buffer size does not match its shape");
    }
    Tape<T> t;
    t.training = training;
    t.input.n = batch.n;
    t.input.c = batch.channels;
    t.input.h = batch.height;
    t.input.w = batch.width;
    t.input.v.assign(batch.values.begin(), batch.values.end());

    std::vector<T> col;
    conv_forward(t.input, param("stem.conv.weight"), stem_geom(config_), t.stem,
                 col);
    bn_forward(t.stem, bn("stem.bn"), training, t.stem_bn);
    relu(t.stem);
    if (config_.stem_pool) {
      maxpool_forward(t.stem, t.pooled, t.pool_argmax);
    } else {
      t.pooled = t.stem;
    }

    t.blocks.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& def = blocks_[b];
      auto& bt = t.blocks[b];
      const Feature<T>& x = t.block_input(b);
      conv_forward(x, param(def.prefix + ".conv1.weight"), def.conv1, bt.a1, col);
      bn_forward(bt.a1, bn(def.prefix + ".bn1"), training, bt.bn1);
      relu(bt.a1);
      conv_forward(bt.a1, param(def.prefix + ".conv2.weight"), def.conv2,
                   bt.out, col);
      bn_forward(bt.out, bn(def.prefix + ".bn2"), training, bt.bn2);
      if (def.has_shortcut) {
        Feature<T> s;
        conv_forward(x, param(def.prefix + ".shortcut.conv.weight"),
                     def.shortcut, s, col);
        bn_forward(s, bn(def.prefix + ".shortcut.bn"), training,
                   bt.bn_shortcut);
        for (std::size_t i = 0; i < s.v.size(); ++i) bt.out.v[i] += s.v[i];
      } else {
        for (std::size_t i = 0; i < x.v.size(); ++i) bt.out.v[i] += x.v[i];
      }
      relu(bt.out);
    }

    const Feature<T>& last = t.last();
    const int channels = last.c;
    const std::size_t plane = last.plane();
    t.gap.assign(static_cast<std::size_t>(last.n) * channels, 0.0);
    for (int i = 0; i < last.n; ++i) {
      for (int c = 0; c < channels; ++c) {
        const T* src = last.sample(i) + c * plane;
        double sum = 0.0;
        for (std::size_t j = 0; j < plane; ++j) sum += src[j];
        t.gap[i * channels + c] = sum / static_cast<double>(plane);
      }
    }
    const int classes = config_.num_classes;
    const T* fc_w = param("fc.weight");
    const T* fc_b = param("fc.bias");
    t.logits.assign(static_cast<std::size_t>(last.n) * classes, 0.0);
    for (int i = 0; i < last.n; ++i) {
      for (int k = 0; k < classes; ++k) {
        double z = fc_b[k];
        for (int c = 0; c < channels; ++c) {
          z += static_cast<double>(fc_w[k * channels + c]) *
               t.gap[i * channels + c];
        }
        t.logits[i * classes + k] = z;
      }
    }
    return t;
  }

  void backward(const Tape<T>& t, std::span<const double> dlogits,
                GradientMap& grads) const {
    const Feature<T>& last = t.last();
    const int n = last.n;
    const int channels = last.c;
    const int classes = config_.num_classes;
    const T* fc_w = param("fc.weight");
    double* d_fc_w = grad(grads, "fc.weight");
    double* d_fc_b = grad(grads, "fc.bias");
    std::vector<double> dgap(static_cast<std::size_t>(n) * channels, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < classes; ++k) {
        const double d = dlogits[i * classes + k];
        d_fc_b[k] += d;
        for (int c = 0; c < channels; ++c) {
          d_fc_w[k * channels + c] += d * t.gap[i * channels + c];
          dgap[i * channels + c] += d * static_cast<double>(fc_w[k * channels + c]);
        }
      }
    }

    Feature<T> dx;
    dx.reset(n, channels, last.h, last.w);
    const double inv_plane = 1.0 / static_cast<double>(last.plane());
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < channels; ++c) {
        const T g = static_cast<T>(dgap[i * channels + c] * inv_plane);
        T* dst = dx.sample(i) + c * last.plane();
        std::fill_n(dst, last.plane(), g);
      }
    }

    std::vector<T> col;
    for (std::size_t b = blocks_.size(); b-- > 0;) {
      const auto& def = blocks_[b];
      const auto& bt = t.blocks[b];
      const Feature<T>& x = t.block_input(b);
      relu_backward(dx, bt.out);

      Feature<T> dmain = dx;
      bn_backward(dmain, bt.bn2, param(def.prefix + ".bn2.weight"), t.training,
                  grad(grads, def.prefix + ".bn2.weight"),
                  grad(grads, def.prefix + ".bn2.bias"));
      Feature<T> da1;
      da1.reset(bt.a1.n, bt.a1.c, bt.a1.h, bt.a1.w);
      conv_backward(bt.a1, param(def.prefix + ".conv2.weight"), def.conv2, dmain,
                    grad(grads, def.prefix + ".conv2.weight"), &da1, col);
      relu_backward(da1, bt.a1);
      bn_backward(da1, bt.bn1, param(def.prefix + ".bn1.weight"), t.training,
                  grad(grads, def.prefix + ".bn1.weight"),
                  grad(grads, def.prefix + ".bn1.bias"));
      Feature<T> dinput;
      dinput.reset(x.n, x.c, x.h, x.w);
      conv_backward(x, param(def.prefix + ".conv1.weight"), def.conv1, da1,
                    grad(grads, def.prefix + ".conv1.weight"), &dinput, col);
      if (def.has_shortcut) {
        Feature<T> dshort = dx;
        bn_backward(dshort, bt.bn_shortcut,
                    param(def.prefix + ".shortcut.bn.weight"), t.training,
                    grad(grads, def.prefix + ".shortcut.bn.weight"),
                    grad(grads, def.prefix + ".shortcut.bn.bias"));
        conv_backward(x, param(def.prefix + ".shortcut.conv.weight"),
                      def.shortcut, dshort,
                      grad(grads, def.prefix + ".shortcut.conv.weight"), &dinput,
                      col);
      } else {
        for (std::size_t i = 0; i < dx.v.size(); ++i) dinput.v[i] += dx.v[i];
      }
      dx = std::move(dinput);
    }

    Feature<T> dstem;
    if (config_.stem_pool) {
      dstem.reset(t.stem.n, t.stem.c, t.stem.h, t.stem.w);
      maxpool_backward(dx, t.pool_argmax, dstem);
    } else {
      dstem = std::move(dx);
    }
    relu_backward(dstem, t.stem);
    bn_backward(dstem, t.stem_bn, param("stem.bn.weight"), t.training,
                grad(grads, "stem.bn.weight"), grad(grads, "stem.bn.bias"));
    conv_backward<T>(t.input, param("stem.conv.weight"), stem_geom(config_),
                     dstem, grad(grads, "stem.conv.weight"), nullptr, col);
  }

  BatchStatistics batch_statistics(const Tape<T>& t) const {
    BatchStatistics stats;
    auto record = [&](const std::string& prefix, const BnCache<T>& cache) {
      BatchNormStats s;
      s.mean = cache.mean;
      s.unbiased_var = cache.var;
      if (cache.count > 1) {
        const double factor = static_cast<double>(cache.count) /
                              static_cast<double>(cache.count - 1);
        for (auto& v : s.unbiased_var) v *= factor;
      }
      stats.emplace(prefix, std::move(s));
    };
    record("stem.bn", t.stem_bn);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const auto& def = blocks_[b];
      record(def.prefix + ".bn1", t.blocks[b].bn1);
      record(def.prefix + ".bn2", t.blocks[b].bn2);
      if (def.has_shortcut) {
        record(def.prefix + ".shortcut.bn", t.blocks[b].bn_shortcut);
      }
    }
    return stats;
  }

 private:
  const T* param(const std::string& name) const {
    if constexpr (std::is_same_v<T, float>) {
      return params_.at(name).values.data();
    } else {
      return converted_.at(name).data();
    }
  }

  BnParams<T> bn(const std::string& prefix) const {
    return {param(prefix + ".weight"), param(prefix + ".bias"),
            param(prefix + ".running_mean"), param(prefix + ".running_var")};
  }

  static double* grad(GradientMap& grads, const std::string& name) {
    return grads.at(name).values.data();
  }

  const NetConfig& config_;
  const ParameterSet& params_;
  std::vector<BlockDef> blocks_;
  std::map<std::string, std::vector<T>> converted_;
};

GradientMap zero_gradients(const ParameterSet& params) {
  GradientMap grads;
  for (const auto& [name, array] : params) {
    grads.emplace(name, Array<double>{array.shape,
                                      std::vector<double>(array.size(), 0.0)});
  }
  return grads;
}

template <typename T>
Logits forward_impl(const NetConfig& config, const ParameterSet& params,
                    const Batch& batch) {
  Engine<T> engine(config, params);
  auto tape = engine.forward(batch, false);
  return {batch.n, config.num_classes, std::move(tape.logits)};
}

template <typename T>
ForwardCapture capture_impl(const NetConfig& config, const ParameterSet& params,
                            const Batch& sample) {
  Engine<T> engine(config, params);
  auto tape = engine.forward(sample, false);
  ForwardCapture cap;
  cap.logits = std::move(tape.logits);
  const auto& last = tape.last();
  cap.channels = last.c;
  cap.height = last.h;
  cap.width = last.w;
  cap.last_conv_activations.assign(last.v.begin(), last.v.end());
  cap.pooled = std::move(tape.gap);
  return cap;
}

void check_labels(const NetConfig& config, const Batch& batch,
                  std::span<const int> labels, const LossSpec& loss) {
  if (static_cast<int>(labels.size()) != batch.n) {
    raise(ErrorKind::kShape, "label count does not match batch size");
  }
  if (static_cast<int>(loss.class_weights.size()) != config.num_classes) {
    raise(ErrorKind::kShape, "loss has " +
                                 std::to_string(loss.class_weights.size()) +
                                 " class weights for " +
                                 std::to_string(config.num_classes) + " classes");
  }
}

template <typename T>
GradientResult gradients_impl(const NetConfig& config, const ParameterSet& params,
                              const Batch& batch, std::span<const int> labels,
                              const LossSpec& loss) {
  Engine<T> engine(config, params);
  auto tape = engine.forward(batch, true);
  auto ce = train::weighted_cross_entropy_grad(tape.logits, config.num_classes,
                                               labels, loss.class_weights);
  GradientResult result;
  result.loss = ce.loss;
  result.gradients = zero_gradients(params);
  engine.backward(tape, ce.dlogits, result.gradients);
  result.batch_stats = engine.batch_statistics(tape);
  return result;
}

template <typename T>
double loss_impl(const NetConfig& config, const ParameterSet& params,
                 const Batch& batch, std::span<const int> labels,
                 const LossSpec& loss) {
  Engine<T> engine(config, params);
  auto tape = engine.forward(batch, true);
  return train::weighted_cross_entropy(tape.logits, config.num_classes, labels,
                                       loss.class_weights);
}

}  // namespace

Logits forward(const NetConfig& config, const ParameterSet& params,
               const Batch& batch, Precision precision) {
  return precision == Precision::kFloat32
             ? forward_impl<float>(config, params, batch)
             : forward_impl<double>(config, params, batch);
}

ForwardCapture forward_with_capture(const NetConfig& config,
                                    const ParameterSet& params,
                                    const Batch& sample, Precision precision) {
  if (sample.n != 1) {
    raise(ErrorKind::kShape, "forward_with_capture takes a single sample, got " +
                                 std::to_string(sample.n));
  }
  return precision == Precision::kFloat32
             ? capture_impl<float>(config, params, sample)
             : capture_impl<double>(config, params, sample);
}

std::vector<double> logit_gradient_wrt_activations(const NetConfig& config,
                                                   const ParameterSet& params,
                                                   const ForwardCapture& capture,
                                                   int class_index) {
  if (class_index < 0 || class_index >= config.num_classes) {
    raise(ErrorKind::kLabel, "class index " + std::to_string(class_index) +
                                 " outside [0, " +
                                 std::to_string(config.num_classes) + ")");
  }
  const auto& w = params.at("fc.weight").values;
  const std::size_t plane =
      static_cast<std::size_t>(capture.height) * capture.width;
  std::vector<double> grad(capture.last_conv_activations.size());
  // logit = b + sum_c W[k,c] * mean(A_c), so each position of channel c
  // receives W[k,c] / (H * W).
  for (int c = 0; c < capture.channels; ++c) {
    const double g = static_cast<double>(w[class_index * capture.channels + c]) /
                     static_cast<double>(plane);
    std::fill_n(grad.begin() + c * plane, plane, g);
  }
  return grad;
}

GradientResult gradients(const NetConfig& config, const ParameterSet& params,
                         const Batch& batch, std::span<const int> labels,
                         const LossSpec& loss, Precision precision) {
  check_labels(config, batch, labels, loss);
  return precision == Precision::kFloat32
             ? gradients_impl<float>(config, params, batch, labels, loss)
             : gradients_impl<double>(config, params, batch, labels, loss);
}

double training_loss(const NetConfig& config, const ParameterSet& params,
                     const Batch& batch, std::span<const int> labels,
                     const LossSpec& loss, Precision precision) {
  check_labels(config, batch, labels, loss);
  return precision == Precision::kFloat32
             ? loss_impl<float>(config, params, batch, labels, loss)
             : loss_impl<double>(config, params, batch, labels, loss);
}

void apply_batch_statistics(ParameterSet& params, const BatchStatistics& stats,
                            double momentum) {
  for (const auto& [prefix, s] : stats) {
    auto& mean = params.at(prefix + ".running_mean").values;
    auto& var = params.at(prefix + ".running_var").values;
    for (std::size_t c = 0; c < mean.size(); ++c) {
      mean[c] = static_cast<float>((1.0 - momentum) * mean[c] +
                                   momentum * s.mean[c]);
      var[c] = static_cast<float>((1.0 - momentum) * var[c] +
                                  momentum * s.unbiased_var[c]);
    }
  }
}

}  // namespace fcns::net
