// Loads a converted backbone through the model factory and compares every
// tensor with the values the fixture generator wrote.
// usage: pretrained_check <dir with tiny.bin and expected.json>
#include <iostream>
#include <nlohmann/json.hpp>

#include "pocus/error.hpp"
#include "pocus/models/classifier.hpp"
#include "pocus/util.hpp"

using namespace pocus;

int main(int argc, char** argv) {
  if (argc != 2) return 2;
  const std::filesystem::path dir = argv[1];
  const auto expected = nlohmann::json::parse(read_file(dir / "expected.json"));
  auto cfg = models::default_config(models::Arch::kVggCam);
  cfg.backbone.vgg_filters = {4, 8};
  cfg.backbone.vgg_convs = {1, 1};
  cfg.pretrained_backbone = true;
  cfg.pretrained_path = (dir / "tiny.bin").string();
  cfg.pretrained_sha256 = expected["sha256"];
  const auto model = models::build_classifier(cfg);
  const auto state = model.state();
  int failures = 0;
  for (const auto& [name, values] : expected["tensors"].items()) {
    const auto it = state.find(name);
    if (it == state.end()) {
      std::cout << "FAIL missing " << name << "\n";
      ++failures;
      continue;
    }
    const auto v = values.get<std::vector<float>>();
    if (v.size() != it->second.size() || !std::equal(v.begin(), v.end(), it->second.data())) {
      std::cout << "FAIL values differ for " << name << "\n";
      ++failures;
    }
  }
  // wrong checksum is refused
  cfg.pretrained_sha256 = std::string(64, '0');
  try {
    models::build_classifier(cfg);
    std::cout << "FAIL checksum mismatch accepted\n";
    ++failures;
  } catch (const ValidationError&) {
  }
  // wrong shapes are refused
  cfg.pretrained_sha256.clear();
  cfg.backbone.vgg_filters = {4, 16};
  try {
    models::build_classifier(cfg);
    std::cout << "FAIL shape mismatch accepted\n";
    ++failures;
  } catch (const ValidationError&) {
  }
  std::cout << expected["tensors"].size() << " tensors checked, " << failures << " failures\n";
  return failures ? 1 : 0;
}
