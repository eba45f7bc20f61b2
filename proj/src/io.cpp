#include "unirit/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

namespace unirit {

namespace {

bool parse_double(std::string_view token, double& value) {
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last;
}

}  // namespace

PointCloud read_cloud(std::istream& in, const std::string& origin) {
  std::vector<double> coords;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream fields(line);
    std::string token;
    int count = 0;
    while (fields >> token) {
      double v = 0.0;
      if (count >= 3 || !parse_double(token, v))
        throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected three numbers per line");
      coords.push_back(v);
      ++count;
    }
    if (count != 3)
      throw ValidationError(origin + ":" + std::to_string(lineno) + ": expected three numbers per line");
  }
  if (coords.empty()) throw ValidationError(origin + ": no points");
  Points3d pts(static_cast<Eigen::Index>(coords.size() / 3), 3);
  std::copy(coords.begin(), coords.end(), pts.data());
  return PointCloud(std::move(pts));
}

PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  return read_cloud(in, path.string());
}

void write_cloud(std::ostream& out, const Points3d& points) {
  char buf[96];
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int n = std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", points(i, 0), points(i, 1), points(i, 2));
    out.write(buf, n);
  }
}

void write_cloud(const std::filesystem::path& path, const Points3d& points) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  write_cloud(out, points);
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

}  // namespace unirit
