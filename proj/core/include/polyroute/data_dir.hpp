#pragma once

#include <filesystem>

namespace polyroute {

// POLYROUTE_DATA_DIR env var when set, otherwise the directory the library
// was built against. Installed trees should set the env var.
std::filesystem::path default_data_dir();

}  // namespace polyroute
