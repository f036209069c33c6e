#include "stormdiff/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include "stormdiff/binary_io.hpp"

namespace stormdiff {

ParamSet<float> Checkpoint::prefixed(const std::string& prefix) const {
  std::vector<NamedTensor<float>> out;
  for (const auto& spec : param_table(model)) {
    const std::string name = prefix + spec.name;
    if (!tensors.contains(name)) {
      throw std::runtime_error("checkpoint: missing tensor " + name);
    }
    const auto& t = tensors.at(name);
    if (t.dims != spec.dims) {
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + shape_str(t.dims) +
                               ", expected " + shape_str(spec.dims));
    }
    out.push_back({spec.name, t});
  }
  return ParamSet<float>(std::move(out));
}

ModelParams<float> Checkpoint::params() const { return prefixed(""); }

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp.string());
    os.write(Checkpoint::kMagic.data(), 8);
    io::write_le(os, Checkpoint::kVersion);
    io::write_le(os, static_cast<std::uint32_t>(c.kind));
    for (std::uint32_t v : {c.model.in_channels, c.model.n_feat, c.model.n_cfeat, c.model.height,
                            c.model.width, c.model.time_embed_dim}) {
      io::write_le(os, v);
    }
    io::write_le(os, c.T);
    io::write_le(os, c.beta1);
    io::write_le(os, c.betaT);
    const auto& m = c.meta;
    for (std::uint32_t v : {m.epoch, m.epochs_total, m.batch_size, m.t_max}) io::write_le(os, v);
    io::write_le(os, m.adam_step);
    io::write_le(os, m.seed);
    for (double v : {m.lr_max, m.lr_min, m.keep_prob, m.ema_decay, m.train_frac}) {
      io::write_le(os, v);
    }
    io::write_le(os, static_cast<std::uint32_t>(m.history.size()));
    for (const auto& r : m.history) {
      io::write_le(os, r.epoch);
      io::write_le(os, r.lr);
      io::write_le(os, r.train_loss);
      io::write_le(os, r.val_loss);
    }
    io::write_le(os, static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& e : c.tensors) {
      io::write_le(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      io::write_le(os, static_cast<std::uint32_t>(e.tensor.rank()));
      for (std::size_t d : e.tensor.dims) io::write_le(os, static_cast<std::uint64_t>(d));
      io::write_array<float>(os, e.tensor.span());
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  io::read_exact(is, magic.data(), 8, "checkpoint magic");
  if (magic != Checkpoint::kMagic) {
    throw std::runtime_error("checkpoint: " + path.string() + " is not an SDCKPT file");
  }
  if (const auto v = io::read_le<std::uint32_t>(is, "version"); v != Checkpoint::kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  }
  Checkpoint c;
  const auto kind = io::read_le<std::uint32_t>(is, "kind");
  if (kind > 1) throw std::runtime_error("checkpoint: bad kind " + std::to_string(kind));
  c.kind = static_cast<CheckpointKind>(kind);
  auto u32 = [&](const char* what) { return io::read_le<std::uint32_t>(is, what); };
  auto f64 = [&](const char* what) { return io::read_le<double>(is, what); };
  c.model.in_channels = u32("model config");
  c.model.n_feat = u32("model config");
  c.model.n_cfeat = u32("model config");
  c.model.height = u32("model config");
  c.model.width = u32("model config");
  c.model.time_embed_dim = u32("model config");
  c.model.validate();
  c.T = u32("schedule");
  c.beta1 = f64("schedule");
  c.betaT = f64("schedule");
  auto& m = c.meta;
  m.epoch = u32("training state");
  m.epochs_total = u32("training state");
  m.batch_size = u32("training state");
  m.t_max = u32("training state");
  m.adam_step = io::read_le<std::uint64_t>(is, "training state");
  m.seed = io::read_le<std::uint64_t>(is, "training state");
  m.lr_max = f64("training state");
  m.lr_min = f64("training state");
  m.keep_prob = f64("training state");
  m.ema_decay = f64("training state");
  m.train_frac = f64("training state");
  const auto rows = u32("history");
  for (std::uint32_t i = 0; i < rows; ++i) {
    HistoryRow r;
    r.epoch = u32("history");
    r.lr = f64("history");
    r.train_loss = f64("history");
    r.val_loss = f64("history");
    m.history.push_back(r);
  }
  const auto n = u32("tensor count");
  std::vector<NamedTensor<float>> tensors;
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto len = u32("tensor name length");
    if (len > 4096) throw std::runtime_error("checkpoint: implausible tensor name length");
    std::string name(len, '\0');
    io::read_exact(is, name.data(), len, "tensor name");
    const auto rank = u32("tensor rank");
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for " + name);
    Shape dims(rank);
    for (auto& d : dims) d = io::read_le<std::uint64_t>(is, "tensor dims");
    Tensor<float> t(dims);
    io::read_array<float>(is, t.span(), "tensor values");
    tensors.push_back({std::move(name), std::move(t)});
  }
  c.tensors = ParamSet<float>(std::move(tensors));
  return c;
}

}  // namespace stormdiff
