// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "eri/errors.hpp"
#include "eri/run_config.hpp"

namespace eri {

namespace fs = std::filesystem;

std::string model_config_to_text(const ModelConfig& cfg) {
  RunConfig rc;
  rc.model = cfg;
  return rc.section_text("model.");
}

ModelConfig model_config_from_text(std::string_view text) {
  RunConfig rc;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("model config: malformed line '" + std::string(line) + "'");
    rc.set("model." + std::string(line.substr(0, eq)), line.substr(eq + 1));
  }
  return rc.model;
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    out_.append(c, n);
  }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(double v) { u32(std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::string& data() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(std::vector<std::uint8_t> b, std::string source) : b_(std::move(b)), source_(std::move(source)) {}

  FormatError fail(const std::string& what) const {
    return FormatError(source_ + ": " + what + " at byte offset " + std::to_string(off_));
  }
  void need(std::size_t n) const {
    if (off_ + n > b_.size()) throw fail("unexpected end of file");
  }
  std::uint8_t u8() {
    need(1);
    return b_[off_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + off_), n);
    off_ += n;
    return s;
  }
  bool at_end() const { return off_ == b_.size(); }
  std::size_t offset() const { return off_; }

 private:
  std::vector<std::uint8_t> b_;
  std::string source_;
  std::size_t off_ = 0;
};

}  // namespace

void save_checkpoint(const fs::path& path, const EriModel& model, const AdamW* optimizer) {
  Writer w;
  w.bytes("ERI1", 4);
  w.str(model_config_to_text(model.config()));
  const auto& entries = model.params().entries();
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.shape.size()));
    for (auto d : e.tensor.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data) w.f32(v);
  }
  const bool with_opt = optimizer != nullptr && optimizer->steps() > 0;
  w.u8(with_opt ? 1 : 0);
  if (with_opt) {
    const auto& o = optimizer->options();
    w.u64(optimizer->steps());
    w.f64(o.beta1);
    w.f64(o.beta2);
    w.f64(o.eps);
    w.f64(o.weight_decay);
    const auto& m = optimizer->first_moments();
    const auto& v = optimizer->second_moments();
    if (m.size() != entries.size()) throw StateError("checkpoint: optimizer state does not match the model");
    for (std::size_t i = 0; i < entries.size(); ++i) {
      for (double x : m[i]) w.f64(x);
      for (double x : v[i]) w.f64(x);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Reader r({std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}, path.string());
  r.need(4);
  char magic[4] = {static_cast<char>(r.u8()), static_cast<char>(r.u8()), static_cast<char>(r.u8()),
                   static_cast<char>(r.u8())};
  if (std::memcmp(magic, "ERI1", 4) != 0) throw FormatError(path.string() + ": bad magic (expected ERI1) at byte offset 0");
  ModelConfig cfg;
  try {
    cfg = model_config_from_text(r.str());
  } catch (const ConfigError& e) {
    throw r.fail(std::string("bad config block: ") + e.what());
  }
  Checkpoint ck{EriModel(cfg), std::nullopt};
  auto& entries = ck.model.params().entries();
  const std::uint32_t count = r.u32();
  if (count != entries.size()) {
    throw r.fail("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                 std::to_string(entries.size()));
  }
  for (auto& e : entries) {
    const std::string name = r.str();
    if (name != e.name) throw r.fail("expected tensor '" + e.name + "', found '" + name + "'");
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    if (shape != e.tensor.shape) {
      throw r.fail("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                   shape_string(e.tensor.shape));
    }
    for (auto& v : e.tensor.data) {
      const float f = r.f32();
      if (!std::isfinite(f)) throw r.fail("non-finite value in tensor '" + name + "'");
      v = f;
    }
  }
  if (r.u8() == 1) {
    const std::uint64_t steps = r.u64();
    AdamW::Options o;
    o.beta1 = r.f64();
    o.beta2 = r.f64();
    o.eps = r.f64();
    o.weight_decay = r.f64();
    std::vector<std::vector<double>> m, v;
    for (const auto& e : entries) {
      m.emplace_back(e.tensor.numel());
      v.emplace_back(e.tensor.numel());
      for (auto& x : m.back()) x = r.f64();
      for (auto& x : v.back()) x = r.f64();
    }
    AdamW opt(o);
    opt.restore(steps, std::move(m), std::move(v));
    ck.optimizer = std::move(opt);
  }
  if (!r.at_end()) throw r.fail("trailing bytes");
  return ck;
}

}  // namespace eri
