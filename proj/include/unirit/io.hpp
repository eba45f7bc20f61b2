#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "unirit/geom.hpp"

namespace unirit {

/// ASCII cloud format: one point per line, three whitespace-separated decimals;
/// blank lines and lines starting with '#' are skipped.
PointCloud read_cloud(std::istream& in, const std::string& origin = "<stream>");
PointCloud read_cloud(const std::filesystem::path& path);

/// Writes with 17 significant digits so doubles round-trip exactly.
void write_cloud(std::ostream& out, const Points3d& points);
void write_cloud(const std::filesystem::path& path, const Points3d& points);
inline void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  write_cloud(path, cloud.points());
}

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace unirit
