#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "unirit/error.hpp"
#include "unirit/io.hpp"

using namespace unirit;

TEST(ReadCloud, SkipsCommentsAndBlankLines) {
  std::istringstream in("# header\n\n1 2 3\n  -4.5\t5e-1 6  \n# trailing\n7 8 9\n");
  const auto c = read_cloud(in);
  ASSERT_EQ(c.size(), 3);
  EXPECT_EQ(c.point(1), Vec3(-4.5, 0.5, 6.0));
  EXPECT_EQ(c.point(2), Vec3(7, 8, 9));
}

TEST(ReadCloud, ReportsMalformedLines) {
  std::istringstream two("1 2 3\n4 5\n");
  try {
    read_cloud(two, "cloud.xyz");
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("cloud.xyz:2"), std::string::npos);
  }
  std::istringstream four("1 2 3 4\n");
  EXPECT_THROW(read_cloud(four), ValidationError);
  std::istringstream junk("1 2 x\n");
  EXPECT_THROW(read_cloud(junk), ValidationError);
  std::istringstream empty("# nothing\n");
  EXPECT_THROW(read_cloud(empty), ValidationError);
  std::istringstream nan("nan 0 0\n");
  EXPECT_THROW(read_cloud(nan), ValidationError);
}

TEST(WriteCloud, RoundTripsDoublesExactly) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1e3);
  Points3d p(64, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = n(rng);
  std::ostringstream out;
  write_cloud(out, p);
  std::istringstream in(out.str());
  EXPECT_EQ(read_cloud(in).points(), p);
}

TEST(WriteCloud, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "unirit_test_io";
  std::filesystem::create_directories(dir);
  Points3d p(2, 3);
  p << 0.1, 0.2, 0.3, -1e-300, 1e300, 0;
  write_cloud(dir / "c.xyz", PointCloud(p));
  EXPECT_EQ(read_cloud(dir / "c.xyz").points(), p);
  EXPECT_THROW(read_cloud(dir / "missing.xyz"), RuntimeFailure);
  std::filesystem::remove_all(dir);
}
