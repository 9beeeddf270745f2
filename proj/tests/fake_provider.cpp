// Test stand-in for an external embedding provider: reads newline-delimited
// texts, writes a deterministic 8-column CSV matrix with row order preserved.
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: fake_provider <request> <response>\n";
    return 2;
  }
  std::ifstream in(argv[1]);
  if (!in) return 2;
  std::ofstream out(argv[2]);
  std::string line;
  while (std::getline(in, line)) {
    std::uint64_t h = 1469598103934665603ull;
    int vowels = 0;
    for (const char c : line) {
      h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
      if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ++vowels;
    }
    out << line.size() << ',' << vowels << ',' << (h % 97) << ',' << (h % 13) << ','
        << ((h >> 8) % 31) << ',' << ((h >> 16) % 29) << ',' << ((h >> 24) % 23) << ','
        << ((h >> 32) % 19) << '\n';
  }
  return 0;
}
