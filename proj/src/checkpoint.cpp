#include "fzg/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "fzg/error.hpp"
#include "fzg/io.hpp"

namespace fzg {

namespace {

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(v >> (8 * i))));
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get_le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw TruncatedError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamSet& p) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const std::string& name = p.name(i);
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw FormatError("tensor name too long for checkpoint: " + name.substr(0, 32) + "...");
    }
    const Tensor& t = p[i];
    if (t.rank() > std::numeric_limits<std::uint8_t>::max()) {
      throw FormatError("tensor '" + name + "' rank exceeds 255");
    }
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_le<std::uint8_t>(out, 0);
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(out, d);
    for (double v : t.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

ParamSet decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (std::memcmp(bytes.data(), kCheckpointMagic, head) != 0) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  if (head < 4) throw TruncatedError("checkpoint truncated while reading magic");
  r.take(4, "magic");
  const auto version = r.get_le<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get_le<std::uint32_t>("tensor count");
  ParamSet p;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint16_t>("name length");
    std::string name(r.take(name_len, "name"));
    const auto dtype = r.get_le<std::uint8_t>("dtype");
    if (dtype != 0) {
      throw FormatError("tensor '" + name + "' has unsupported dtype " + std::to_string(dtype));
    }
    const auto rank = r.get_le<std::uint8_t>("rank");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      const auto dim = r.get_le<std::uint64_t>("dims");
      if (dim == 0) throw FormatError("tensor '" + name + "' has a zero dimension");
      d = static_cast<std::size_t>(dim);
      if (n > r.remaining() / d) throw TruncatedError("checkpoint truncated in '" + name + "'");
      n *= d;
    }
    if (r.remaining() / 8 < n) throw TruncatedError("checkpoint truncated in '" + name + "'");
    std::vector<double> data(n);
    for (auto& v : data) v = std::bit_cast<double>(r.get_le<std::uint64_t>("payload"));
    p.add(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) {
    throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return p;
}

void save_checkpoint(const ParamSet& p, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(p));
}

ParamSet load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace fzg
