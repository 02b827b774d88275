#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

using namespace baeoed;

TEST(Config, ParsesPairsAndComments) {
  std::istringstream in("# header\nk = 20\nsurrogate=zero  # trailing\n\n alpha = 0.5 \n");
  const auto c = Config::parse(in);
  EXPECT_EQ(c.get_int("k", 0), 20);
  EXPECT_EQ(c.get("surrogate", ""), "zero");
  EXPECT_EQ(c.get_double("alpha", 0), 0.5);
  EXPECT_EQ(c.get_int("missing", 7), 7);
  EXPECT_EQ(c.entries().size(), 3u);
}

TEST(Config, RejectsMalformedLines) {
  std::istringstream in("k 20\n");
  EXPECT_THROW(Config::parse(in), FormatError);
  std::istringstream empty_key("= 3\n");
  EXPECT_THROW(Config::parse(empty_key), FormatError);
}

TEST(Config, TypedGettersValidate) {
  Config c;
  c.set("k", "twenty");
  c.set("x", "1.5e");
  EXPECT_THROW(c.get_int("k", 0), FormatError);
  EXPECT_THROW(c.get_double("x", 0), FormatError);
}

TEST(Config, LaterSourceWins) {
  Config file, flags;
  file.set("k", "5");
  file.set("seed", "3");
  flags.set("k", "9");
  const auto eff = file.merged(flags);
  EXPECT_EQ(eff.get_int("k", 0), 9);
  EXPECT_EQ(eff.get_int("seed", 0), 3);
}

TEST(Config, MissingFile) { EXPECT_THROW(Config::load("/no/such/config.cfg"), IoError); }

TEST(Threads, ExplicitCapWins) {
  set_thread_limit(3);
  EXPECT_EQ(thread_limit(), 3);
  set_thread_limit(0);
  EXPECT_GE(thread_limit(), 1);
}

TEST(Threads, ParallelForVisitsEveryIndexAndRethrows) {
  set_thread_limit(4);
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
  EXPECT_EQ(std::count(hits.begin(), hits.end(), 1), 1000);
  EXPECT_THROW(parallel_for(10, [](std::size_t i) {
                 if (i == 7) throw SolverFailure("x");
               }),
               SolverFailure);
  set_thread_limit(0);
}
