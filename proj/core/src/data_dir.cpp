#include "polyroute/data_dir.hpp"

#include <cstdlib>

namespace polyroute {

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("POLYROUTE_DATA_DIR"); env && *env)
        return std::filesystem::path(env);
    return std::filesystem::path(POLYROUTE_SOURCE_DATA_DIR);
}

}  // namespace polyroute
