#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmp/adam.hpp"
#include "cmp/net.hpp"

namespace cmp {

// Little-endian binary writer/reader; doubles round-trip bit-exactly.
class BinWriter {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void f64s(const std::vector<double>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    raw(v.data(), v.size() * sizeof(double));
  }
  void i32s(const std::vector<int>& v) {
    u32(static_cast<std::uint32_t>(v.size()));
    for (int x : v) u32(static_cast<std::uint32_t>(x));
  }

  const std::vector<char>& bytes() const { return buf_; }

  void to_file(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!f) throw std::runtime_error("short write to " + path);
  }

 private:
  void raw(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<char> buf_;
};

class BinReader {
 public:
  explicit BinReader(std::vector<char> bytes) : buf_(std::move(bytes)) {}

  static BinReader from_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return BinReader(std::move(bytes));
  }

  std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
  std::int64_t i64() { std::int64_t v; raw(&v, sizeof v); return v; }
  double f64() { double v; raw(&v, sizeof v); return v; }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  std::vector<double> f64s() {
    const std::uint32_t n = u32();
    std::vector<double> v(n);
    raw(v.data(), n * sizeof(double));
    return v;
  }
  std::vector<int> i32s() {
    const std::uint32_t n = u32();
    std::vector<int> v(n);
    for (auto& x : v) x = static_cast<int>(u32());
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void raw(void* p, std::size_t n) {
    if (pos_ + n > buf_.size()) throw std::runtime_error("truncated blob");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

inline void write_net(BinWriter& w, const DenseNet& net) {
  w.i32s(net.widths);
  w.str(act_name(net.hidden_act));
  w.str(act_name(net.output_act));
  std::vector<double> flat;
  flatten_params(net, flat);
  w.f64s(flat);
}

inline DenseNet read_net(BinReader& r) {
  DenseNet net;
  net.widths = r.i32s();
  net.hidden_act = act_from_name(r.str());
  net.output_act = act_from_name(r.str());
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
    net.w.emplace_back(net.widths[l], net.widths[l + 1]);
    net.b.emplace_back(net.widths[l + 1], 0.0);
  }
  assign_params(net, r.f64s());
  return net;
}

inline void write_adam(BinWriter& w, const Adam& a) {
  w.f64(a.lr);
  w.f64(a.beta1);
  w.f64(a.beta2);
  w.f64(a.eps);
  w.i64(a.step);
  w.i64(a.rejected);
  w.f64s(a.m);
  w.f64s(a.v);
}

inline Adam read_adam(BinReader& r) {
  Adam a;
  a.lr = r.f64();
  a.beta1 = r.f64();
  a.beta2 = r.f64();
  a.eps = r.f64();
  a.step = r.i64();
  a.rejected = r.i64();
  a.m = r.f64s();
  a.v = r.f64s();
  return a;
}

}  // namespace cmp
