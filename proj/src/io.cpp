#include "hjbi/io.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <memory>

#include "hjbi/error.hpp"

namespace hjbi {

namespace {

struct DigestContext {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  DigestContext() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw Error("sha256: cannot initialize digest");
  }
  void update(const void* data, std::size_t size) {
    if (EVP_DigestUpdate(ctx.get(), data, size) != 1) throw Error("sha256: digest update failed");
  }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) throw Error("sha256: digest finalization failed");
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
      std::snprintf(buf, sizeof buf, "%02x", md[i]);
      out += buf;
    }
    return out;
  }
};

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
  DigestContext d;
  d.update(data.data(), data.size());
  return d.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  DigestContext d;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    d.update(buf, static_cast<std::size_t>(in.gcount()));
  }
  return d.hex();
}

std::string canonical_text(const ControlSet& set) {
  std::string out = "{";
  for (const auto& p : set.points) {
    out += "(";
    for (Eigen::Index i = 0; i < p.size(); ++i) out += (i ? "," : "") + number(p(i));
    out += ")";
  }
  return out + "}";
}

std::string canonical_text(const CoefficientField& field) {
  std::string out = std::to_string(field.rows()) + "x" + std::to_string(field.cols()) + (field.periodic() ? "p[" : "[");
  for (std::size_t i = 0; i < field.entries().size(); ++i) out += (i ? ";" : "") + field.entries()[i].to_string();
  return out + "]";
}

std::string canonical_text(const HJBIOperator& op) {
  std::string out = "n=" + std::to_string(op.n) + " p=" + std::to_string(op.p_dim);
  out += " sigma=" + canonical_text(op.sigma);
  out += " drift=" + canonical_text(op.drift);
  out += " cost=" + canonical_text(op.cost);
  out += " A=" + canonical_text(op.A);
  out += " B=" + canonical_text(op.B);
  return out;
}

std::string operator_hash(const HJBIOperator& op) { return sha256_hex(canonical_text(op)); }

}  // namespace hjbi
