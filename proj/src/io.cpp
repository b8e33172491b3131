#include "mtrans/io.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mtrans {

namespace {

void append_u64_le(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_f64_le(std::string& out, double v) {
  append_u64_le(out, std::bit_cast<uint64_t>(v));
}

void append_f32_le(std::string& out, float v) {
  const uint32_t u = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}

uint64_t take_u64_le(const std::string& s, size_t off) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

double take_f64_le(const std::string& s, size_t off) {
  return std::bit_cast<double>(take_u64_le(s, off));
}

float take_f32_le(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return std::bit_cast<float>(v);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  if (!in.good() && !in.eof()) throw std::runtime_error("failed reading " + path);
  return std::move(buf).str();
}

struct MttHeader {
  uint8_t code = 0;
  std::vector<size_t> dims;
  size_t payload_off = 0;
  size_t numel = 1;
};

MttHeader parse_mtt_header(const std::string& bytes, const std::string& path) {
  if (bytes.size() < 6 || bytes.compare(0, 4, "MTT1") != 0)
    throw std::runtime_error(path + ": not an MTT1 container");
  MttHeader h;
  h.code = static_cast<uint8_t>(bytes[4]);
  if (h.code > 3) throw std::runtime_error(path + ": unknown dtype code");
  const size_t rank = static_cast<uint8_t>(bytes[5]);
  if (bytes.size() < 6 + 8 * rank)
    throw std::runtime_error(path + ": truncated header");
  for (size_t i = 0; i < rank; ++i) {
    const uint64_t d = take_u64_le(bytes, 6 + 8 * i);
    if (d == 0) throw std::runtime_error(path + ": zero dimension");
    h.dims.push_back(static_cast<size_t>(d));
    h.numel *= static_cast<size_t>(d);
  }
  h.payload_off = 6 + 8 * rank;
  static const size_t elsize[4] = {4, 8, 8, 16};
  if (bytes.size() - h.payload_off != h.numel * elsize[h.code])
    throw std::runtime_error(path + ": payload size mismatch");
  return h;
}

std::string manifest_blob_name(const std::string& manifest_path) {
  const std::filesystem::path p(manifest_path);
  std::string stem = p.stem().string();
  if (stem.empty()) stem = p.filename().string();
  std::string blob = stem + ".mtt";
  if (blob == p.filename().string()) blob = stem + ".blob.mtt";
  return blob;
}

std::string sibling(const std::string& manifest_path, const std::string& name) {
  const std::filesystem::path dir = std::filesystem::path(manifest_path).parent_path();
  return (dir / name).string();
}

}  // namespace

void atomic_write_file(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.good()) throw std::runtime_error("failed writing " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

void write_mtt(const std::string& path, const Tensor& t) {
  if (!t.defined()) throw std::invalid_argument("write_mtt: undefined tensor");
  std::string out = "MTT1";
  out.push_back(t.dtype() == DType::f32 ? '\x00' : '\x01');
  out.push_back(static_cast<char>(t.rank()));
  for (size_t i = 0; i < t.rank(); ++i) append_u64_le(out, t.dim(i));
  for (size_t i = 0; i < t.size(); ++i) {
    if (t.dtype() == DType::f32)
      append_f32_le(out, static_cast<float>(t.at(i)));
    else
      append_f64_le(out, t.at(i));
  }
  atomic_write_file(path, out);
}

void write_mtt(const std::string& path, const ComplexGrid& g) {
  if (g.H == 0 || g.W == 0) throw std::invalid_argument("write_mtt: empty grid");
  std::string out = "MTT1";
  out.push_back('\x03');
  out.push_back('\x02');
  append_u64_le(out, g.H);
  append_u64_le(out, g.W);
  for (const auto& z : g.v) {
    append_f64_le(out, z.real());
    append_f64_le(out, z.imag());
  }
  atomic_write_file(path, out);
}

Tensor read_mtt(const std::string& path) {
  const std::string bytes = read_file(path);
  const MttHeader h = parse_mtt_header(bytes, path);
  if (h.code > 1)
    throw std::runtime_error(path + ": complex container, expected real");
  std::vector<double> vals(h.numel);
  for (size_t i = 0; i < h.numel; ++i)
    vals[i] = h.code == 0 ? static_cast<double>(take_f32_le(bytes, h.payload_off + 4 * i))
                          : take_f64_le(bytes, h.payload_off + 8 * i);
  return Tensor::from_data(h.dims, std::move(vals),
                           h.code == 0 ? DType::f32 : DType::f64);
}

ComplexGrid read_mtt_complex(const std::string& path) {
  const std::string bytes = read_file(path);
  const MttHeader h = parse_mtt_header(bytes, path);
  if (h.code < 2)
    throw std::runtime_error(path + ": real container, expected complex");
  if (h.dims.size() != 2)
    throw std::runtime_error(path + ": complex grid must be rank 2");
  ComplexGrid g = ComplexGrid::zeros(h.dims[0], h.dims[1]);
  const size_t step = h.code == 2 ? 8 : 16;
  for (size_t i = 0; i < h.numel; ++i) {
    const size_t off = h.payload_off + step * i;
    if (h.code == 2)
      g.v[i] = {static_cast<double>(take_f32_le(bytes, off)),
                static_cast<double>(take_f32_le(bytes, off + 4))};
    else
      g.v[i] = {take_f64_le(bytes, off), take_f64_le(bytes, off + 8)};
  }
  return g;
}

void write_mask_mtt(const std::string& path, const SamplingMask& m) {
  const size_t n = m.columns.size();
  std::vector<double> flags(n);
  for (size_t i = 0; i < n; ++i) flags[i] = m.columns[i] ? 1.0 : 0.0;
  write_mtt(path, Tensor::from_data({n}, std::move(flags), DType::f32));
}

SamplingMask read_mask_mtt(const std::string& path) {
  const Tensor t = read_mtt(path);
  if (t.rank() != 1)
    throw std::runtime_error(path + ": mask must be a rank-1 vector");
  SamplingMask m;
  m.W = t.size();
  m.columns.resize(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    const double v = t.at(i);
    if (v != 0.0 && v != 1.0)
      throw std::runtime_error(path + ": mask entries must be 0 or 1");
    m.columns[i] = v == 1.0 ? 1 : 0;
  }
  return m;
}

std::vector<Tensor> read_mtt_volume(const std::string& path) {
  const Tensor t = read_mtt(path);
  if (t.rank() == 2) return {t};
  if (t.rank() != 3)
    throw std::runtime_error(path + ": volume must be rank 2 or 3");
  const size_t D = t.dim(0), H = t.dim(1), W = t.dim(2);
  std::vector<Tensor> slices;
  for (size_t d = 0; d < D; ++d) {
    std::vector<double> vals(t.data() + d * H * W, t.data() + (d + 1) * H * W);
    slices.push_back(Tensor::from_data({H, W}, std::move(vals), t.dtype()));
  }
  return slices;
}

void write_pgm(const std::string& path, const Tensor& img) {
  if (!img.defined() || img.rank() != 2)
    throw std::invalid_argument("write_pgm expects a rank-2 image");
  const size_t H = img.dim(0), W = img.dim(1);
  std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n65535\n";
  for (size_t i = 0; i < img.size(); ++i) {
    double v = img.at(i);
    if (!(v >= 0.0)) v = 0.0;
    if (v > 1.0) v = 1.0;
    const auto q = static_cast<uint16_t>(std::lround(v * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  atomic_write_file(path, out);
}

Tensor read_pgm(const std::string& path) {
  const std::string bytes = read_file(path);
  size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    if (start == pos) throw std::runtime_error(path + ": truncated PGM header");
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw std::runtime_error(path + ": not a P5 file");
  const size_t W = std::stoull(token());
  const size_t H = std::stoull(token());
  if (token() != "65535")
    throw std::runtime_error(path + ": expected 16-bit samples");
  ++pos;  // single whitespace byte after maxval
  if (bytes.size() - pos != H * W * 2)
    throw std::runtime_error(path + ": payload size mismatch");
  std::vector<double> vals(H * W);
  for (size_t i = 0; i < vals.size(); ++i) {
    const auto hi = static_cast<unsigned char>(bytes[pos + 2 * i]);
    const auto lo = static_cast<unsigned char>(bytes[pos + 2 * i + 1]);
    vals[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return Tensor::from_data({H, W}, std::move(vals));
}

std::string dtype_name(DType dt) { return dt == DType::f32 ? "f32" : "f64"; }

DType dtype_from_name(const std::string& name) {
  if (name == "f32") return DType::f32;
  if (name == "f64") return DType::f64;
  throw std::invalid_argument("unknown dtype name: " + name);
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void save_checkpoint(const std::string& manifest_path, const MTransConfig& cfg,
                     const ParamStore& params) {
  cfg.validate();
  const auto expected = mtrans_param_shapes(cfg);
  if (params.size() != expected.size())
    throw std::invalid_argument("save_checkpoint: store has " +
                                std::to_string(params.size()) + " tensors, config implies " +
                                std::to_string(expected.size()));
  for (size_t i = 0; i < expected.size(); ++i) {
    if (params.name(i) != expected[i].first ||
        params.get(i).shape() != expected[i].second)
      throw std::invalid_argument("save_checkpoint: parameter " + params.name(i) +
                                  " does not match the config's registry");
    if (params.get(i).dtype() != cfg.dtype)
      throw std::invalid_argument("save_checkpoint: parameter " + params.name(i) +
                                  " has the wrong dtype");
  }

  std::vector<double> blob;
  blob.reserve(params.total_elements());
  std::ostringstream man;
  man << "mtrans-checkpoint v1\n";
  const std::string blob_name = manifest_blob_name(manifest_path);
  man << "blob " << blob_name << "\n";
  man << "cfg H " << cfg.H << "\n";
  man << "cfg W " << cfg.W << "\n";
  man << "cfg C " << cfg.C << "\n";
  man << "cfg P " << cfg.P << "\n";
  man << "cfg N_enc " << cfg.N_enc << "\n";
  man << "cfg heads " << cfg.heads << "\n";
  man << "cfg ffn_mult " << cfg.ffn_mult << "\n";
  man << "cfg task " << task_name(cfg.task) << "\n";
  man << "cfg s " << cfg.s << "\n";
  man << "cfg alpha " << format_double(cfg.alpha) << "\n";
  man << "cfg eps_ln " << format_double(cfg.eps_ln) << "\n";
  man << "cfg variant " << variant_name(cfg.variant) << "\n";
  man << "cfg dtype " << dtype_name(cfg.dtype) << "\n";
  size_t offset = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params.get(i);
    man << "param " << params.name(i) << " " << offset << " ";
    for (size_t d = 0; d < t.rank(); ++d) man << (d ? "," : "") << t.dim(d);
    man << " " << dtype_name(t.dtype()) << "\n";
    for (size_t j = 0; j < t.size(); ++j) blob.push_back(t.at(j));
    offset += t.size();
  }
  const size_t total = blob.size();
  write_mtt(sibling(manifest_path, blob_name),
            Tensor::from_data({total}, std::move(blob), cfg.dtype));
  atomic_write_file(manifest_path, std::move(man).str());
}

LoadedCheckpoint load_checkpoint(const std::string& manifest_path) {
  std::istringstream in(read_file(manifest_path));
  std::string line;
  if (!std::getline(in, line) || line != "mtrans-checkpoint v1")
    throw std::runtime_error(manifest_path + ": not a checkpoint manifest");

  MTransConfig cfg;
  std::string blob_name;
  struct Entry {
    std::string name;
    size_t offset = 0;
    std::vector<size_t> dims;
    DType dtype = DType::f64;
  };
  std::vector<Entry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "blob") {
      ls >> blob_name;
    } else if (kind == "cfg") {
      std::string key, value;
      ls >> key >> value;
      if (key == "H") cfg.H = std::stoull(value);
      else if (key == "W") cfg.W = std::stoull(value);
      else if (key == "C") cfg.C = std::stoull(value);
      else if (key == "P") cfg.P = std::stoull(value);
      else if (key == "N_enc") cfg.N_enc = std::stoull(value);
      else if (key == "heads") cfg.heads = std::stoull(value);
      else if (key == "ffn_mult") cfg.ffn_mult = std::stoull(value);
      else if (key == "task") cfg.task = task_from_name(value);
      else if (key == "s") cfg.s = std::stoull(value);
      else if (key == "alpha") cfg.alpha = std::stod(value);
      else if (key == "eps_ln") cfg.eps_ln = std::stod(value);
      else if (key == "variant") cfg.variant = variant_from_name(value);
      else if (key == "dtype") cfg.dtype = dtype_from_name(value);
      else throw std::runtime_error(manifest_path + ": unknown config key " + key);
    } else if (kind == "param") {
      Entry e;
      std::string dims, dt;
      ls >> e.name >> e.offset >> dims >> dt;
      if (e.name.empty() || dims.empty() || dt.empty())
        throw std::runtime_error(manifest_path + ": malformed param line: " + line);
      size_t start = 0;
      while (start <= dims.size()) {
        const size_t comma = dims.find(',', start);
        const std::string piece =
            dims.substr(start, comma == std::string::npos ? comma : comma - start);
        e.dims.push_back(std::stoull(piece));
        if (comma == std::string::npos) break;
        start = comma + 1;
      }
      e.dtype = dtype_from_name(dt);
      entries.push_back(std::move(e));
    } else {
      throw std::runtime_error(manifest_path + ": unknown manifest line: " + line);
    }
  }
  if (blob_name.empty())
    throw std::runtime_error(manifest_path + ": manifest names no blob");
  cfg.validate();

  const Tensor blob = read_mtt(sibling(manifest_path, blob_name));
  if (blob.rank() != 1)
    throw std::runtime_error(manifest_path + ": blob must be rank 1");
  if (blob.dtype() != cfg.dtype)
    throw std::runtime_error(manifest_path + ": blob dtype differs from config");

  const auto expected = mtrans_param_shapes(cfg);
  if (entries.size() != expected.size())
    throw std::runtime_error(manifest_path + ": manifest lists " +
                             std::to_string(entries.size()) + " parameters, config implies " +
                             std::to_string(expected.size()));
  LoadedCheckpoint out;
  out.config = cfg;
  size_t offset = 0;
  for (size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    if (e.name != expected[i].first)
      throw std::runtime_error(manifest_path + ": parameter " + e.name +
                               " out of order, expected " + expected[i].first);
    if (e.dims != expected[i].second)
      throw std::runtime_error(manifest_path + ": parameter " + e.name +
                               " has the wrong shape");
    if (e.dtype != cfg.dtype)
      throw std::runtime_error(manifest_path + ": parameter " + e.name +
                               " has the wrong dtype");
    if (e.offset != offset)
      throw std::runtime_error(manifest_path + ": parameter " + e.name +
                               " is not contiguous in the blob");
    const size_t numel = shape_numel(e.dims);
    if (offset + numel > blob.size())
      throw std::runtime_error(manifest_path + ": blob too small for " + e.name);
    std::vector<double> vals(blob.data() + offset, blob.data() + offset + numel);
    out.params.store.add(e.name, Tensor::from_data(e.dims, std::move(vals), cfg.dtype));
    offset += numel;
  }
  if (offset != blob.size())
    throw std::runtime_error(manifest_path + ": blob has trailing data");
  return out;
}

}  // namespace mtrans
