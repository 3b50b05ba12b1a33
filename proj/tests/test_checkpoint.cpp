#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "dyncap/checkpoint.hpp"

using namespace dyncap;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("container round-trips bitwise") {
  Checkpoint ckpt;
  ckpt.header.step = 123456789;
  ckpt.header.active_widths = {32, 48, 64};
  ckpt.header.rng_words = {1, 2, 3, 0xffffffffffffffffULL};
  ckpt.arrays.push_back({"layer0.weight", {2, 3}, {0.1, -0.2, 3e-300, -0.0, 1e300, 5.5}});
  ckpt.arrays.push_back({"layer0.bias", {2}, {1.0, -1.0}});
  ckpt.arrays.push_back({"scalars", {}, {42.0}});

  const std::string path = temp_path("dyncap_ckpt_test.bin");
  save_checkpoint(path, ckpt);
  Checkpoint loaded = load_checkpoint(path);

  CHECK(loaded.header.step == ckpt.header.step);
  CHECK(loaded.header.active_widths == ckpt.header.active_widths);
  CHECK(loaded.header.rng_words == ckpt.header.rng_words);
  REQUIRE(loaded.arrays.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(loaded.arrays[i].name == ckpt.arrays[i].name);
    CHECK(loaded.arrays[i].shape == ckpt.arrays[i].shape);
    CHECK(loaded.arrays[i].data == ckpt.arrays[i].data);
  }
  CHECK(loaded.find("layer0.bias") != nullptr);
  CHECK(loaded.find("missing") == nullptr);

  // a second save of the loaded checkpoint is byte-identical
  const std::string path2 = temp_path("dyncap_ckpt_test2.bin");
  save_checkpoint(path2, loaded);
  CHECK(file_bytes(path) == file_bytes(path2));

  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST_CASE("container rejects corrupted input") {
  const std::string path = temp_path("dyncap_ckpt_bad.bin");
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTDYNCAP_GARBAGE";
  }
  CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(temp_path("no_such_file_anywhere.bin")), std::runtime_error);
  std::remove(path.c_str());
}
