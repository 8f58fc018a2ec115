#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/common/textio.hpp"

using namespace cotsteer;

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42), c(43);
  bool any_diff = false;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next_u64();
    ASSERT_EQ(va, b.next_u64());
    if (va != c.next_u64()) any_diff = true;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Rng, BoundedIntsCoverRange) {
  Rng rng(1);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    const uint64_t v = rng.next_below(10);
    ASSERT_LT(v, 10u);
    counts[v]++;
  }
  for (int c : counts) EXPECT_GT(c, 800);  // ~1000 each
}

TEST(Rng, NormalMoments) {
  Rng rng(7);
  double sum = 0, sum2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    sum += x;
    sum2 += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sum2 / n, 1.0, 0.02);
}

TEST(Rng, MixSeedSeparatesStreams) {
  EXPECT_NE(mix_seed(1, 2), mix_seed(1, 3));
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 2));
  EXPECT_EQ(mix_seed(5, 9), mix_seed(5, 9));
}

TEST(TextIo, RoundTripAndLines) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "cotsteer-textio-test";
  fs::create_directories(dir);
  const fs::path p = dir / "sample.txt";
  write_text(p, "alpha\nbeta\n");
  EXPECT_EQ(read_text(p), "alpha\nbeta\n");
  auto lines = read_lines(p);
  ASSERT_EQ(lines.size(), 2u);
  EXPECT_EQ(lines[0], "alpha");
  EXPECT_EQ(lines[1], "beta");
  fs::remove_all(dir);
}

TEST(TextIo, MissingFileFails) {
  try {
    read_text("/nonexistent/cotsteer/file.txt");
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::io_error);
  }
}

TEST(TextIo, TrimAndSplit) {
  EXPECT_EQ(trim("  a b \n"), "a b");
  EXPECT_EQ(trim("   "), "");
  auto words = split_ws(" one  two\tthree ");
  ASSERT_EQ(words.size(), 3u);
  EXPECT_EQ(words[2], "three");
}
