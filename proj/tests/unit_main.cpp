#define DOCTEST_CONFIG_IMPLEMENT
#include <filesystem>

#include "doctest.h"
#include "test_common.hpp"

std::string g_test_exe_dir;

int main(int argc, char** argv) {
  g_test_exe_dir = std::filesystem::absolute(argv[0]).parent_path().string();
  doctest::Context context(argc, argv);
  return context.run();
}
