// SPDX-License-Identifier: Apache-2.0
#include "csilab/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "csilab/config.hpp"
#include "csilab/errors.hpp"

namespace fs = std::filesystem;

namespace csilab {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw std::invalid_argument("string too long for header");
    u16(static_cast<std::uint16_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  std::string& bytes() { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string what) : data_(data), what_(std::move(what)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::size_t n = u16();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  void need(std::size_t n) const {
    if (remaining() < n) throw CorruptionError(what_ + ": truncated file");
  }

 private:
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  const std::string& data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void check_magic(const std::string& data, const char* magic, const fs::path& path) {
  if (data.size() < 8 || std::memcmp(data.data(), magic, 8) != 0) {
    throw FormatError("'" + path.string() + "': bad magic (expected " + std::string(magic, 8) + ")");
  }
}

void write_grid(Writer& w, const GridSpec& g, const ArrayGeometry& a) {
  w.u64(g.t_samples);
  w.u64(g.subcarriers);
  w.f64(g.dt_s);
  w.f64(g.df_hz);
  w.f64(g.f1_hz);
  w.u64(a.n_horizontal);
  w.u64(a.n_vertical);
  w.f64(a.element_spacing_wavelengths);
}

void read_grid(Reader& r, GridSpec& g, ArrayGeometry& a) {
  g.t_samples = r.u64();
  g.subcarriers = r.u64();
  g.dt_s = r.f64();
  g.df_hz = r.f64();
  g.f1_hz = r.f64();
  a.n_horizontal = r.u64();
  a.n_vertical = r.u64();
  a.element_spacing_wavelengths = r.f64();
}

std::string dataset_header(const DatasetFile& f, std::uint32_t crc) {
  Writer w;
  w.raw(kDatasetMagic, 8);
  w.str(f.name);
  w.str(f.preset);
  w.u8(static_cast<std::uint8_t>(f.split));
  w.u64(f.seed);
  write_grid(w, f.grid, f.geometry);
  w.u64(f.samples.size());
  w.u32(crc);
  for (const CsiSample& s : f.samples) w.u8(s.line_of_sight ? 1 : 0);
  return std::move(w.bytes());
}

}  // namespace

std::uint32_t crc32_of(const void* data, std::size_t bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (bytes > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(bytes, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    bytes -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp.string() + "'");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw FormatError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) { return read_all(path); }

std::size_t dataset_header_bytes(const DatasetFile& file) { return dataset_header(file, 0).size(); }

std::size_t dataset_payload_bytes(const DatasetFile& file) {
  return file.samples.size() * file.grid.t_samples * file.grid.subcarriers * file.geometry.elements() * 8;
}

void write_dataset(const DatasetFile& file, const fs::path& path) {
  file.grid.validate();
  file.geometry.validate();
  const std::size_t per = file.grid.t_samples * file.grid.subcarriers * file.geometry.elements();
  Writer payload;
  payload.bytes().reserve(file.samples.size() * per * 8);
  for (const CsiSample& s : file.samples) {
    if (!(s.grid == file.grid) || !(s.geometry == file.geometry) || s.values.size() != per) {
      throw std::invalid_argument("write_dataset: sample shape differs from the file header");
    }
    for (const Complex& v : s.values) {
      payload.f32(static_cast<float>(v.real()));
      payload.f32(static_cast<float>(v.imag()));
    }
  }
  const std::string& body = payload.bytes();
  write_text_file(path, dataset_header(file, crc32_of(body.data(), body.size())) + body);
}

DatasetFile read_dataset(const fs::path& path) {
  const std::string data = read_all(path);
  check_magic(data, kDatasetMagic, path);
  Reader r(data, path.string());
  r.need(8);
  for (int i = 0; i < 8; ++i) r.u8();
  DatasetFile f;
  f.name = r.str();
  f.preset = r.str();
  const std::uint8_t split = r.u8();
  if (split > 2) throw FormatError(path.string() + ": bad split tag");
  f.split = static_cast<Split>(split);
  f.seed = r.u64();
  read_grid(r, f.grid, f.geometry);
  try {
    f.grid.validate();
    f.geometry.validate();
  } catch (const std::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  const std::uint64_t count = r.u64();
  const std::uint32_t crc = r.u32();
  const std::size_t per = f.grid.t_samples * f.grid.subcarriers * f.geometry.elements();
  if (count > data.size()) throw CorruptionError(path.string() + ": implausible sample count");
  r.need(count);
  std::vector<bool> los(count);
  for (std::uint64_t i = 0; i < count; ++i) los[i] = r.u8() != 0;
  const std::size_t payload = count * per * 8;
  if (r.remaining() != payload) {
    throw CorruptionError(path.string() + ": payload is " + std::to_string(r.remaining()) +
                          " bytes, header declares " + std::to_string(payload));
  }
  if (crc32_of(data.data() + r.pos(), payload) != crc) {
    throw CorruptionError(path.string() + ": payload CRC32 mismatch");
  }
  f.samples.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CsiSample s(f.grid, f.geometry);
    s.line_of_sight = los[i];
    for (Complex& v : s.values) {
      const float re = r.f32();
      const float im = r.f32();
      v = {re, im};
    }
    f.samples.push_back(std::move(s));
  }
  return f;
}

std::vector<fs::path> write_corpus(const std::vector<DatasetHandle>& corpus, const fs::path& dir) {
  std::vector<fs::path> paths;
  for (const DatasetHandle& ds : corpus) {
    for (Split s : {Split::Train, Split::Val, Split::Test}) {
      DatasetFile f{ds.name, ds.preset, s, ds.seed, ds.grid, ds.geometry, ds.split_samples(s)};
      const fs::path p = dir / (ds.name + "." + split_name(s) + ".csids");
      write_dataset(f, p);
      paths.push_back(p);
    }
  }
  return paths;
}

std::vector<DatasetHandle> read_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("corpus directory '" + dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csids") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, DatasetHandle> by_name;
  std::map<std::string, std::array<std::vector<CsiSample>, 3>> parts;
  for (const fs::path& p : files) {
    DatasetFile f = read_dataset(p);
    auto [it, fresh] = by_name.try_emplace(f.name);
    DatasetHandle& h = it->second;
    if (fresh) {
      h.name = f.name;
      h.preset = f.preset;
      h.grid = f.grid;
      h.geometry = f.geometry;
      h.seed = f.seed;
    } else if (!(h.grid == f.grid) || !(h.geometry == f.geometry) || h.preset != f.preset) {
      throw FormatError(p.string() + ": split files of '" + f.name + "' disagree");
    }
    parts[f.name][static_cast<std::size_t>(f.split)] = std::move(f.samples);
  }
  if (by_name.empty()) throw FormatError("no datasets in '" + dir.string() + "'");
  std::vector<DatasetHandle> out;
  for (auto& [name, h] : by_name) {
    auto& sp = parts[name];
    std::vector<std::size_t>* idx[3] = {&h.train, &h.val, &h.test};
    for (std::size_t s = 0; s < 3; ++s) {
      for (CsiSample& c : sp[s]) {
        idx[s]->push_back(h.samples.size());
        h.samples.push_back(std::move(c));
      }
    }
    out.push_back(std::move(h));
  }
  return out;
}

void save_checkpoint(const MdaeModel& model, const CheckpointMeta& meta, const fs::path& path) {
  std::vector<const Param*> params = model.parameters();
  std::sort(params.begin(), params.end(),
            [](const Param* a, const Param* b) { return a->name < b->name; });

  Writer payload;
  Writer manifest;
  manifest.u32(static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    manifest.str(p->name);
    manifest.u32(static_cast<std::uint32_t>(p->value.rows()));
    manifest.u32(static_cast<std::uint32_t>(p->value.cols()));
    manifest.u64(payload.bytes().size());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      payload.f32(static_cast<float>(p->value.data()[i]));
    }
  }

  std::string meta_text = model_config_text(model.config());
  meta_text += "phase = " + meta.phase + "\n";
  meta_text += "step = " + std::to_string(meta.step) + "\n";
  meta_text += "seed = " + std::to_string(meta.seed) + "\n";

  Writer w;
  w.raw(kCheckpointMagic, 8);
  w.u32(static_cast<std::uint32_t>(meta_text.size()));
  w.raw(meta_text.data(), meta_text.size());
  w.raw(manifest.bytes().data(), manifest.bytes().size());
  const std::string& body = payload.bytes();
  w.u64(body.size());
  w.u32(crc32_of(body.data(), body.size()));
  w.raw(body.data(), body.size());
  write_text_file(path, w.bytes());
}

CheckpointContents read_checkpoint(const fs::path& path) {
  const std::string data = read_all(path);
  check_magic(data, kCheckpointMagic, path);
  Reader r(data, path.string());
  for (int i = 0; i < 8; ++i) r.u8();
  const std::uint32_t meta_len = r.u32();
  r.need(meta_len);
  const std::string meta_text = data.substr(r.pos(), meta_len);
  for (std::uint32_t i = 0; i < meta_len; ++i) r.u8();

  CheckpointContents c;
  std::string model_text;
  std::istringstream in(meta_text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    key.erase(key.find_last_not_of(' ') + 1);
    std::string value = line.substr(eq + 1);
    value.erase(0, value.find_first_not_of(' '));
    if (key == "phase") c.meta.phase = value;
    else if (key == "step") c.meta.step = std::stoull(value);
    else if (key == "seed") c.meta.seed = std::stoull(value);
    else model_text += line + "\n";
  }
  try {
    c.config = parse_model_config(model_text);
  } catch (const ConfigError& e) {
    throw FormatError(path.string() + ": bad model metadata: " + e.what());
  }

  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.name = r.str();
    e.rows = r.u32();
    e.cols = r.u32();
    e.offset = r.u64();
    c.manifest.push_back(std::move(e));
  }
  const std::uint64_t bytes = r.u64();
  const std::uint32_t crc = r.u32();
  if (r.remaining() != bytes || bytes % 4 != 0) {
    throw CorruptionError(path.string() + ": payload length does not match the manifest");
  }
  if (crc32_of(data.data() + r.pos(), bytes) != crc) {
    throw CorruptionError(path.string() + ": payload CRC32 mismatch");
  }
  c.payload.resize(bytes / 4);
  for (float& v : c.payload) v = r.f32();
  return c;
}

void load_checkpoint_into(const fs::path& path, MdaeModel& model, CheckpointMeta* meta) {
  const CheckpointContents c = read_checkpoint(path);
  std::map<std::string, const ManifestEntry*> entries;
  for (const ManifestEntry& e : c.manifest) {
    if (!entries.emplace(e.name, &e).second) {
      throw FormatError(path.string() + ": parameter '" + e.name + "' listed twice");
    }
  }
  for (Param* p : model.parameters()) {
    const auto it = entries.find(p->name);
    if (it == entries.end()) {
      throw FormatError(path.string() + ": parameter '" + p->name + "' missing from checkpoint");
    }
    const ManifestEntry& e = *it->second;
    if (e.rows != static_cast<std::size_t>(p->value.rows()) ||
        e.cols != static_cast<std::size_t>(p->value.cols())) {
      throw FormatError(path.string() + ": shape mismatch for parameter '" + p->name + "': checkpoint " +
                        std::to_string(e.rows) + "x" + std::to_string(e.cols) + ", model " +
                        std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
    }
    const std::size_t count = e.rows * e.cols;
    if (e.offset % 4 != 0 || e.offset / 4 + count > c.payload.size()) {
      throw CorruptionError(path.string() + ": parameter '" + p->name + "' lies outside the payload");
    }
    for (std::size_t i = 0; i < count; ++i) p->value.data()[i] = c.payload[e.offset / 4 + i];
    entries.erase(it);
  }
  if (!entries.empty()) {
    throw FormatError(path.string() + ": checkpoint parameter '" + entries.begin()->first +
                      "' does not exist in the model");
  }
  if (meta) *meta = c.meta;
}

MdaeModel load_checkpoint(const fs::path& path, CheckpointMeta* meta) {
  const CheckpointContents c = read_checkpoint(path);
  MdaeModel model(c.config, 0);
  load_checkpoint_into(path, model, meta);
  return model;
}

}  // namespace csilab
