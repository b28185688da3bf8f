#include "imunet/training.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "imunet/errors.hpp"
#include "imunet/io.hpp"

namespace imunet {

NodePtr mse_loss(const NodePtr& pred, const Tensor& target) {
  if (!pred->value.same_shape(target))
    throw DimensionError("mse_loss: prediction " + shape_str(pred->value.shape) +
                         " vs target " + shape_str(target.shape));
  NodePtr diff = sub(pred, make_const(target));
  return scale(sum(mul(diff, diff)), 1.0 / static_cast<double>(target.numel()));
}

Adam::Adam(std::vector<NodePtr> params, double learning_rate, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const NodePtr& p : params_) {
    m_.emplace_back(p->value.shape);
    v_.emplace_back(p->value.shape);
  }
}

void Adam::zero_grads() {
  for (const NodePtr& p : params_) p->zero_grad();
}

void Adam::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Node& p = *params_[i];
    if (p.grad.data.empty()) continue;  // parameter untouched by this graph
    for (std::size_t j = 0; j < p.value.data.size(); ++j) {
      const double g = p.grad.data[j];
      double& m = m_[i].data[j];
      double& v = v_[i].data[j];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      p.value.data[j] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
    }
  }
}

TrainResult train(Model& model, const std::vector<Window>& windows, const TrainConfig& config) {
  if (windows.empty()) throw ContractError("train: need at least one window");
  if (config.learning_rate < 0.0 || config.batch_size < 1 || config.epochs < 0)
    throw ContractError("train: invalid configuration");
  const std::int64_t m = model.output_dim;
  for (const Window& w : windows) {
    if (static_cast<std::int64_t>(w.target.size()) != m)
      throw ConfigError("train: window target dimension " + std::to_string(w.target.size()) +
                        " does not match model output " + std::to_string(m));
    if (w.input.shape != std::vector<std::int64_t>{model.input_channels, model.input_length})
      throw ConfigError("train: window input " + shape_str(w.input.shape) +
                        " does not match model input spec");
  }

  const std::int64_t n = static_cast<std::int64_t>(windows.size());
  Adam optimizer(
      [&] {
        std::vector<NodePtr> nodes;
        for (const ParamRef& p : model.params()) nodes.push_back(p.node);
        return nodes;
      }(),
      config.learning_rate, config.beta1, config.beta2, config.adam_eps);

  // Separate seed domains: the shuffle stream must not collide with the
  // dropout stream for any epoch index.
  Rng dropout_rng(mix_seed(config.seed, 0xD0));
  Ctx ctx{true, &dropout_rng};

  TrainResult result;
  result.epoch_loss.reserve(config.epochs);
  std::vector<std::int64_t> order(n);
  for (std::int64_t i = 0; i < n; ++i) order[i] = i;

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(config.seed ^ 0x9e3779b97f4a7c15ULL, epoch));
    shuffle(order, shuffle_rng);

    double loss_sum = 0.0;
    std::int64_t batch_index = 0;
    for (std::int64_t start = 0; start < n; start += config.batch_size, ++batch_index) {
      const std::int64_t b = std::min(config.batch_size, n - start);
      Tensor x({b, model.input_channels, model.input_length});
      Tensor y({b, m});
      for (std::int64_t r = 0; r < b; ++r) {
        const Window& w = windows[order[start + r]];
        std::memcpy(&x.data[r * w.input.numel()], w.input.data.data(),
                    static_cast<std::size_t>(w.input.numel()) * sizeof(double));
        for (std::int64_t d = 0; d < m; ++d) y.at(r, d) = w.target[d];
      }

      optimizer.zero_grads();
      NodePtr loss = mse_loss(model.forward(make_const(std::move(x)), ctx), y);
      const double loss_value = loss->value.data[0];
      if (!std::isfinite(loss_value))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                    std::to_string(batch_index + 1));
      backward(loss);
      optimizer.step();
      loss_sum += loss_value * static_cast<double>(b);
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(n));
    if (config.report_every > 0 && (epoch + 1) % config.report_every == 0)
      log_info("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(config.epochs) +
               " loss " + format_g9(result.epoch_loss.back()));
  }
  result.steps = optimizer.step_count();
  return result;
}

void write_loss_history(const std::vector<double>& epoch_loss, const std::string& path) {
  std::string out = "epoch,loss\n";
  for (std::size_t i = 0; i < epoch_loss.size(); ++i)
    out += std::to_string(i + 1) + "," + format_g9(epoch_loss[i]) + "\n";
  atomic_write_file(path, out);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'I', 'M', 'U', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct Cursor {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw CheckpointTruncatedError("checkpoint: unexpected end of file at byte " +
                                     std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }
  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s = buf.substr(pos, len);
    pos += len;
    return s;
  }
};

struct DirEntry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::uint64_t offset;  // in scalars
};

void put_directory_and_blob(std::string& out, const std::vector<ParamRef>& refs) {
  put_u32(out, static_cast<std::uint32_t>(refs.size()));
  std::uint64_t offset = 0;
  for (const ParamRef& r : refs) {
    put_str(out, r.name);
    put_u32(out, static_cast<std::uint32_t>(r.node->value.rank()));
    for (std::int64_t d : r.node->value.shape) put_u64(out, static_cast<std::uint64_t>(d));
    put_u64(out, offset);
    offset += static_cast<std::uint64_t>(r.node->value.numel());
  }
  put_u64(out, offset);
  for (const ParamRef& r : refs)
    for (double v : r.node->value.data) put_f64(out, v);
}

std::vector<DirEntry> read_directory(Cursor& c) {
  const std::uint32_t count = c.u32();
  std::vector<DirEntry> dir;
  dir.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    DirEntry e;
    e.name = c.str();
    const std::uint32_t rank = c.u32();
    for (std::uint32_t d = 0; d < rank; ++d) e.shape.push_back(static_cast<std::int64_t>(c.u64()));
    e.offset = c.u64();
    dir.push_back(std::move(e));
  }
  return dir;
}

// Reads a directory + blob section and copies it into the matching tensors.
// `label` names the section in error messages.
template <typename Resolve>
std::uint64_t apply_section(Cursor& c, const std::string& label, Resolve resolve) {
  std::vector<DirEntry> dir = read_directory(c);
  const std::uint64_t blob_len = c.u64();
  c.need(blob_len * 8);
  const std::size_t blob_start = c.pos;
  std::uint64_t expected = 0;
  for (const DirEntry& e : dir) {
    Tensor* t = resolve(e.name);
    if (t == nullptr)
      throw CheckpointCorruptError("checkpoint: unknown " + label + " '" + e.name + "'");
    if (t->shape != e.shape)
      throw CheckpointCorruptError("checkpoint: " + label + " '" + e.name + "' has shape " +
                                   shape_str(e.shape) + ", model expects " +
                                   shape_str(t->shape));
    const std::uint64_t n = static_cast<std::uint64_t>(t->numel());
    if (e.offset + n > blob_len)
      throw CheckpointCorruptError("checkpoint: " + label + " '" + e.name +
                                   "' overruns the data blob");
    Cursor value_cursor{c.buf, blob_start + e.offset * 8};
    for (double& v : t->data) v = value_cursor.f64();
    expected += n;
  }
  if (expected != blob_len)
    throw CheckpointCorruptError("checkpoint: " + label + " blob length " +
                                 std::to_string(blob_len) + " does not match directory total " +
                                 std::to_string(expected));
  c.pos = blob_start + blob_len * 8;
  return blob_len;
}

void check_header(Cursor& c) {
  c.need(8);
  if (std::memcmp(c.buf.data(), kMagic, 8) != 0)
    throw CheckpointCorruptError("checkpoint: bad magic bytes");
  c.pos = 8;
  const std::uint32_t version = c.u32();
  if (version != kVersion)
    throw CheckpointVersionError("checkpoint: format version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kVersion));
}

}  // namespace

void save_checkpoint(Model& model, const std::string& path, std::int64_t step) {
  std::string out;
  out.append(kMagic, 8);
  put_u32(out, kVersion);
  put_str(out, model.name);
  put_u32(out, static_cast<std::uint32_t>(model.output_dim));
  put_u64(out, static_cast<std::uint64_t>(step));

  put_directory_and_blob(out, model.params());

  // Buffers (BN running stats) use the same layout but are not parameters.
  std::vector<ParamRef> buffer_refs;
  for (const BufferRef& b : model.buffers()) {
    // Wrap the raw tensor in a throwaway node so one writer serves both.
    buffer_refs.push_back({b.name, make_const(*b.tensor)});
  }
  put_directory_and_blob(out, buffer_refs);

  atomic_write_file(path, out);
}

Model load_checkpoint(const std::string& path) {
  const std::string buf = read_text_file(path);
  Cursor c{buf};
  check_header(c);
  const std::string name = c.str();
  const std::uint32_t m = c.u32();
  const std::uint64_t step = c.u64();
  (void)step;

  Rng init_rng(0);  // every scalar is overwritten below
  Model model = build_model(name, static_cast<std::int64_t>(m), init_rng);

  std::unordered_map<std::string, Tensor*> params;
  for (const ParamRef& p : model.params()) params[p.name] = &p.node->value;
  std::unordered_map<std::string, Tensor*> buffers;
  for (const BufferRef& b : model.buffers()) buffers[b.name] = b.tensor;

  std::size_t applied_params = 0;
  apply_section(c, "parameter", [&](const std::string& n) -> Tensor* {
    auto it = params.find(n);
    if (it == params.end()) return nullptr;
    ++applied_params;
    return it->second;
  });
  if (applied_params != params.size())
    throw CheckpointCorruptError("checkpoint: parameter directory is missing " +
                                 std::to_string(params.size() - applied_params) + " entries");

  std::size_t applied_buffers = 0;
  apply_section(c, "buffer", [&](const std::string& n) -> Tensor* {
    auto it = buffers.find(n);
    if (it == buffers.end()) return nullptr;
    ++applied_buffers;
    return it->second;
  });
  if (applied_buffers != buffers.size())
    throw CheckpointCorruptError("checkpoint: buffer directory is missing " +
                                 std::to_string(buffers.size() - applied_buffers) + " entries");
  if (c.pos != buf.size())
    throw CheckpointCorruptError("checkpoint: " + std::to_string(buf.size() - c.pos) +
                                 " trailing bytes after the buffer section");
  return model;
}

CheckpointInfo inspect_checkpoint(const std::string& path) {
  const std::string buf = read_text_file(path);
  Cursor c{buf};
  check_header(c);
  CheckpointInfo info;
  info.model_name = c.str();
  info.output_dim = static_cast<std::int64_t>(c.u32());
  info.step = static_cast<std::int64_t>(c.u64());
  std::vector<DirEntry> dir = read_directory(c);
  info.param_scalars = static_cast<std::int64_t>(c.u64());
  (void)dir;
  return info;
}

}  // namespace imunet
