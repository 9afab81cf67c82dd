// Stand-in for an external encoder: fake_layers <L> <width> <request> <response>.
// Every value of piece p at layer l is id(p) + l.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <json.hpp>

#include "probing/layer_stack.hpp"

int main(int argc, char** argv) {
  if (argc != 5) {
    std::cerr << "usage: fake_layers L width request response\n";
    return 2;
  }
  const int layers = std::atoi(argv[1]) + 1;
  const int width = std::atoi(argv[2]);
  std::ifstream in(argv[3]);
  std::ofstream out(argv[4], std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto pieces = nlohmann::json::parse(line).at("pieces").get<std::vector<int>>();
    probing::LayerStack s(layers, static_cast<int>(pieces.size()), width);
    for (int l = 0; l < layers; ++l)
      for (std::size_t p = 0; p < pieces.size(); ++p)
        for (auto& v : s.row(l, static_cast<int>(p))) v = static_cast<float>(pieces[p] + l);
    out << probing::serialize_stack(s);
  }
  return 0;
}
