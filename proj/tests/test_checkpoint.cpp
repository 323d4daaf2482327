#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "qulab/checkpoint.hpp"
#include "qulab/error.hpp"
#include "testutil.hpp"

using namespace qulab;

TEST_CASE("checkpoint round-trip is bit-exact") {
  LanguageModel model = init_model(testutil::tiny_config());
  const auto bytes = serialize_checkpoint(model);
  const LanguageModel back = deserialize_checkpoint(bytes);
  CHECK(testutil::trees_bit_identical(model.params, back.params));
  CHECK(back.config.vocab_size == model.config.vocab_size);
  CHECK(back.config.init_seed == model.config.init_seed);

  // write -> read -> write reproduces identical bytes
  const auto again = serialize_checkpoint(back);
  CHECK(bytes == again);
}

TEST_CASE("checkpoint file io") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "qulab_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.qlb").string();

  LanguageModel model = init_model(testutil::tiny_config());
  save_checkpoint(path, model);
  const LanguageModel back = load_checkpoint(path);
  CHECK(testutil::trees_bit_identical(model.params, back.params));
  fs::remove_all(dir);
}

TEST_CASE("corruption fails the checksum") {
  LanguageModel model = init_model(testutil::tiny_config());
  auto bytes = serialize_checkpoint(model);
  bytes[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), DataError);

  auto truncated = serialize_checkpoint(model);
  truncated.resize(truncated.size() - 9);
  CHECK_THROWS_AS(deserialize_checkpoint(truncated), DataError);
}

TEST_CASE("crc32 known vector") {
  // standard test vector: crc32("123456789") = 0xCBF43926
  const char* s = "123456789";
  CHECK(crc32(reinterpret_cast<const uint8_t*>(s), 9) == 0xCBF43926u);
}
