#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <limits>
#include <unistd.h>

#include "fzg/checkpoint.hpp"
#include "fzg/diffusion.hpp"
#include "fzg/error.hpp"
#include "fzg/io.hpp"
#include "fzg/rng.hpp"

using namespace fzg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path d = fs::temp_directory_path() / ("fzg_ckpt_" + std::to_string(::getpid()));
  fs::create_directories(d);
  return d;
}

void le(std::string& s, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

TEST(Checkpoint, HandBuiltLayout) {
  ParamSet p;
  p.add("ab", Tensor({2}, {1.5, -0.0}));
  p.add("s", Tensor::scalar(3.0));

  std::string expect = "FZGD";
  le(expect, 1, 4);
  le(expect, 2, 4);
  le(expect, 2, 2);
  expect += "ab";
  le(expect, 0, 1);
  le(expect, 1, 1);
  le(expect, 2, 8);
  le(expect, std::bit_cast<std::uint64_t>(1.5), 8);
  le(expect, std::bit_cast<std::uint64_t>(-0.0), 8);
  le(expect, 1, 2);
  expect += "s";
  le(expect, 0, 1);
  le(expect, 0, 1);
  le(expect, std::bit_cast<std::uint64_t>(3.0), 8);

  EXPECT_EQ(encode_checkpoint(p), expect);
  EXPECT_TRUE(decode_checkpoint(expect).bit_equal(p));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(3);
  ParamSet p;
  p.add("block0.lin1.weight", Tensor({3, 4}));
  p.add("odd", Tensor({1, 1, 2}));
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (auto& v : p[i].values()) v = rng.normal() * 1e-200;
  }
  p[1][0] = std::numeric_limits<double>::denorm_min();
  p[1][1] = -0.0;
  const fs::path path = temp_dir() / "rt.fzgd";
  save_checkpoint(p, path);
  EXPECT_TRUE(load_checkpoint(path).bit_equal(p));
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), read_file(path));
}

TEST(Checkpoint, DistinctErrors) {
  ParamSet p;
  p.add("x", Tensor({3}, {1, 2, 3}));
  const std::string good = encode_checkpoint(p);

  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);

  std::string bad_version = good;
  bad_version[4] = 2;
  EXPECT_THROW(decode_checkpoint(bad_version), VersionError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, good.size() - 1}) {
    EXPECT_THROW(decode_checkpoint(good.substr(0, cut)), TruncatedError) << cut;
  }

  EXPECT_THROW(decode_checkpoint(good + "z"), FormatError);

  std::string bad_dtype = good;
  bad_dtype[4 + 4 + 4 + 2 + 1] = 7;
  EXPECT_THROW(decode_checkpoint(bad_dtype), FormatError);

  EXPECT_THROW(load_checkpoint(temp_dir() / "missing.fzgd"), IoError);
}

TEST(Checkpoint, DenoiserLossSurvivesRoundTrip) {
  const DenoiserSpec spec;
  const auto schedule = make_schedule(100, 1e-4, 0.02);
  const ParamSet params = init_denoiser(spec, 9);
  const auto data = gen_class_data(circle_layout(4, 4.0, 0.35), 8, 1);
  Rng rng(4);
  const Batch batch = draw_batch(data, 16, schedule, rng);
  const fs::path path = temp_dir() / "model.fzgd";
  save_checkpoint(params, path);
  const ParamSet back = load_checkpoint(path);
  EXPECT_EQ(diffusion_loss(params, batch, schedule, spec), diffusion_loss(back, batch, schedule, spec));
}

TEST(Io, AtomicWriteLeavesNoTempFile) {
  const fs::path path = temp_dir() / "nested" / "a.txt";
  write_file_atomic(path, "hello");
  write_file_atomic(path, "world");
  EXPECT_EQ(read_file(path), "world");
  for (const auto& e : fs::directory_iterator(path.parent_path())) {
    EXPECT_EQ(e.path().filename(), "a.txt");
  }
}
