#include "pcd/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "pcd/rng.hpp"

namespace pcd {
namespace {

constexpr char kMagic[8] = {'P', 'C', 'D', 'N', 'E', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<int> layer_widths(const NetArch& arch) {
  std::vector<int> widths;
  widths.push_back(arch.input_width());
  widths.insert(widths.end(), arch.hidden.begin(), arch.hidden.end());
  widths.push_back(arch.output_width);
  return widths;
}

void check_params(const NetParams& params) {
  if (params.w.size() != params.arch.param_count()) {
    throw std::invalid_argument("net: parameter array length does not match architecture");
  }
}

void check_forward_args(const NetParams& params, int t, int T, const ContextEmbedding& ctx) {
  check_params(params);
  if (params.arch.context_width != 7) {
    throw std::invalid_argument("net: context width must be 7");
  }
  if (params.arch.time_embed_width < 2 || params.arch.time_embed_width % 2 != 0) {
    throw std::invalid_argument("net: time embedding width must be a positive even number");
  }
  if (T < 1 || t < 1 || t > T) {
    throw std::invalid_argument("net: timestep outside [1,T]");
  }
  if (ctx.scan.empty()) {
    throw std::invalid_argument("net: context scan must be nonempty");
  }
}

void fill_features(const Vec3& q, const ContextEmbedding& ctx,
                   const std::vector<double>& time_embed, std::vector<double>& x) {
  const Vec3 offset = nearest_offset(q, ctx.scan);
  x[0] = q.x;
  x[1] = q.y;
  x[2] = q.z;
  x[3] = offset.x;
  x[4] = offset.y;
  x[5] = offset.z;
  for (int i = 0; i < 7; ++i) {
    x[6 + i] = ctx.summary[i];
  }
  for (std::size_t i = 0; i < time_embed.size(); ++i) {
    x[13 + i] = time_embed[i];
  }
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) {
    b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::ifstream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  }
  return v;
}

std::uint64_t read_u64(std::ifstream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) {
    throw std::runtime_error("checkpoint: truncated file");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  }
  return v;
}

}  // namespace

std::size_t NetArch::param_count() const {
  const std::vector<int> widths = layer_widths(*this);
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    count += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
  }
  return count;
}

ContextEmbedding encode_context(const PointCloud& p) {
  if (p.empty()) {
    throw std::invalid_argument("encode_context: scan must be nonempty");
  }
  ContextEmbedding ctx;
  ctx.scan = p;
  std::sort(ctx.scan.points.begin(), ctx.scan.points.end(), [](const Vec3& a, const Vec3& b) {
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
  });
  const double n = static_cast<double>(ctx.scan.size());
  Vec3 mean{0.0, 0.0, 0.0};
  for (const Vec3& q : ctx.scan.points) {
    mean += q;
  }
  mean = mean * (1.0 / n);
  Vec3 var{0.0, 0.0, 0.0};
  for (const Vec3& q : ctx.scan.points) {
    const Vec3 d = q - mean;
    var += Vec3{d.x * d.x, d.y * d.y, d.z * d.z};
  }
  var = var * (1.0 / n);
  ctx.summary = {mean.x, mean.y, mean.z, var.x, var.y, var.z, std::log1p(n)};
  return ctx;
}

Vec3 nearest_offset(const Vec3& q, const PointCloud& sorted_scan) {
  if (sorted_scan.empty()) {
    throw std::invalid_argument("nearest_offset: scan must be nonempty");
  }
  double best = std::numeric_limits<double>::infinity();
  Vec3 nn = sorted_scan[0];
  for (const Vec3& p : sorted_scan.points) {
    const double d = squared_distance(q, p);
    if (d < best) {
      best = d;
      nn = p;
    }
  }
  return nn - q;
}

std::vector<double> time_embedding(int t, int T, int width) {
  if (width < 2 || width % 2 != 0) {
    throw std::invalid_argument("time_embedding: width must be a positive even number");
  }
  const double u = static_cast<double>(t) / static_cast<double>(T);
  std::vector<double> e(width);
  for (int j = 0; j < width / 2; ++j) {
    const double w = std::numbers::pi * std::ldexp(1.0, j);
    e[2 * j] = std::sin(w * u);
    e[2 * j + 1] = std::cos(w * u);
  }
  return e;
}

NetParams init_params(const NetArch& arch, std::uint64_t seed) {
  NetParams params;
  params.arch = arch;
  params.w.assign(arch.param_count(), 0.0);
  Rng rng(seed);
  const std::vector<int> widths = layer_widths(arch);
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int i = 0; i < fan_out * fan_in; ++i) {
      params.w[pos++] = scale * rng.normal();
    }
    pos += fan_out;  // biases stay zero
  }
  return params;
}

std::vector<Vec3> eps_forward(const NetParams& params, const PointCloud& g_t, int t, int T,
                              const ContextEmbedding& ctx) {
  check_forward_args(params, t, T, ctx);
  const NetArch& arch = params.arch;
  const std::vector<int> widths = layer_widths(arch);
  const std::vector<double> te = time_embedding(t, T, arch.time_embed_width);

  std::vector<double> x(arch.input_width());
  std::vector<double> act_in, act_out;
  std::vector<Vec3> out;
  out.reserve(g_t.size());
  for (const Vec3& q : g_t.points) {
    fill_features(q, ctx, te, x);
    act_in = x;
    std::size_t pos = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      const int in_w = widths[l];
      const int out_w = widths[l + 1];
      const double* W = params.w.data() + pos;
      const double* b = params.w.data() + pos + static_cast<std::size_t>(out_w) * in_w;
      act_out.assign(out_w, 0.0);
      for (int o = 0; o < out_w; ++o) {
        double s = b[o];
        const double* row = W + static_cast<std::size_t>(o) * in_w;
        for (int i = 0; i < in_w; ++i) {
          s += row[i] * act_in[i];
        }
        act_out[o] = l + 2 < widths.size() ? std::tanh(s) : s;
      }
      act_in.swap(act_out);
      pos += static_cast<std::size_t>(out_w) * in_w + out_w;
    }
    out.push_back({act_in[0], act_in[1], act_in[2]});
  }
  return out;
}

EpsGrads eps_backward(const NetParams& params, const PointCloud& g_t, int t, int T,
                      const ContextEmbedding& ctx, const std::vector<Vec3>& upstream) {
  check_forward_args(params, t, T, ctx);
  if (upstream.size() != g_t.size()) {
    throw std::invalid_argument("eps_backward: upstream count must match cloud count");
  }
  const NetArch& arch = params.arch;
  const std::vector<int> widths = layer_widths(arch);
  const std::size_t n_layers = widths.size() - 1;
  const std::vector<double> te = time_embedding(t, T, arch.time_embed_width);

  std::vector<std::size_t> offsets(n_layers);
  {
    std::size_t pos = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
      offsets[l] = pos;
      pos += static_cast<std::size_t>(widths[l]) * widths[l + 1] + widths[l + 1];
    }
  }

  EpsGrads grads;
  grads.param_grad.assign(params.w.size(), 0.0);
  grads.input_grad.assign(g_t.size(), Vec3{0.0, 0.0, 0.0});

  // acts[l] holds the input of layer l; acts[n_layers] the network output.
  std::vector<std::vector<double>> acts(n_layers + 1);
  std::vector<double> delta, delta_prev;
  for (std::size_t pi = 0; pi < g_t.size(); ++pi) {
    acts[0].assign(arch.input_width(), 0.0);
    fill_features(g_t[pi], ctx, te, acts[0]);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const int in_w = widths[l];
      const int out_w = widths[l + 1];
      const double* W = params.w.data() + offsets[l];
      const double* b = W + static_cast<std::size_t>(out_w) * in_w;
      acts[l + 1].assign(out_w, 0.0);
      for (int o = 0; o < out_w; ++o) {
        double s = b[o];
        const double* row = W + static_cast<std::size_t>(o) * in_w;
        for (int i = 0; i < in_w; ++i) {
          s += row[i] * acts[l][i];
        }
        acts[l + 1][o] = l + 1 < n_layers ? std::tanh(s) : s;
      }
    }

    delta = {upstream[pi].x, upstream[pi].y, upstream[pi].z};
    for (std::size_t l = n_layers; l-- > 0;) {
      const int in_w = widths[l];
      const int out_w = widths[l + 1];
      const double* W = params.w.data() + offsets[l];
      double* dW = grads.param_grad.data() + offsets[l];
      double* db = dW + static_cast<std::size_t>(out_w) * in_w;
      delta_prev.assign(in_w, 0.0);
      for (int o = 0; o < out_w; ++o) {
        const double d = delta[o];
        const double* row = W + static_cast<std::size_t>(o) * in_w;
        double* drow = dW + static_cast<std::size_t>(o) * in_w;
        for (int i = 0; i < in_w; ++i) {
          drow[i] += d * acts[l][i];
          delta_prev[i] += d * row[i];
        }
        db[o] += d;
      }
      if (l > 0) {
        for (int i = 0; i < in_w; ++i) {
          const double a = acts[l][i];
          delta_prev[i] *= 1.0 - a * a;
        }
      }
      delta.swap(delta_prev);
    }
    // Coordinates enter twice: directly and through offset = nn - q.
    grads.input_grad[pi] = Vec3{delta[0] - delta[3], delta[1] - delta[4], delta[2] - delta[5]};
  }
  return grads;
}

std::vector<double> sgd_step(const std::vector<double>& params, const std::vector<double>& grad,
                             double lr) {
  if (params.size() != grad.size()) {
    throw std::invalid_argument("sgd_step: gradient length must match parameter length");
  }
  if (!(lr > 0.0)) {
    throw std::invalid_argument("sgd_step: lr must be > 0");
  }
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    out[i] = params[i] - lr * grad[i];
  }
  return out;
}

double lr_schedule(double lr0, double gamma, std::uint64_t k) {
  return lr0 * std::pow(gamma, static_cast<double>(k));
}

void save_checkpoint(const std::string& path, const NetParams& params) {
  check_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  }
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(params.arch.context_width));
  write_u32(out, static_cast<std::uint32_t>(params.arch.time_embed_width));
  write_u32(out, static_cast<std::uint32_t>(params.arch.hidden.size()));
  for (int h : params.arch.hidden) {
    write_u32(out, static_cast<std::uint32_t>(h));
  }
  write_u32(out, static_cast<std::uint32_t>(params.arch.output_width));
  write_u64(out, params.w.size());
  for (double v : params.w) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    write_u64(out, bits);
  }
  if (!out) {
    throw std::runtime_error("checkpoint: write failed for '" + path + "'");
  }
}

NetParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  }
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  if (read_u32(in) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version in '" + path + "'");
  }
  NetParams params;
  params.arch.context_width = static_cast<int>(read_u32(in));
  params.arch.time_embed_width = static_cast<int>(read_u32(in));
  const std::uint32_t n_hidden = read_u32(in);
  if (n_hidden > 64) {
    throw std::runtime_error("checkpoint: implausible hidden layer count");
  }
  params.arch.hidden.resize(n_hidden);
  for (std::uint32_t i = 0; i < n_hidden; ++i) {
    params.arch.hidden[i] = static_cast<int>(read_u32(in));
  }
  params.arch.output_width = static_cast<int>(read_u32(in));
  const std::uint64_t count = read_u64(in);
  if (count != params.arch.param_count()) {
    throw std::runtime_error("checkpoint: parameter count does not match architecture");
  }
  params.w.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t bits = read_u64(in);
    std::memcpy(&params.w[i], &bits, sizeof(double));
  }
  return params;
}

}  // namespace pcd
