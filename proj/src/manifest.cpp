#include "synbrain/manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>

#include "synbrain/params.hpp"

namespace synbrain {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256 init failed");
    }
  }
  void update(std::string_view bytes) { EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()); }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(digits[md[i] >> 4]);
      out.push_back(digits[md[i] & 15]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string blob_hash(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot read " + file.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Sha256 h;
  h.update("blob " + std::to_string(bytes.size()));
  h.update(std::string_view("\0", 1));
  h.update(bytes);
  return h.hex();
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string content_hash(const std::vector<std::filesystem::path>& inputs) {
  namespace fs = std::filesystem;
  Sha256 tree;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const fs::path& root = inputs[k];
    std::vector<std::pair<std::string, std::string>> listing;
    if (fs::is_regular_file(root)) {
      listing.emplace_back(root.filename().string(), blob_hash(root));
    } else if (fs::is_directory(root)) {
      for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        listing.emplace_back(fs::relative(e.path(), root).generic_string(), blob_hash(e.path()));
      }
    } else {
      throw FormatError("input " + root.string() + " does not exist");
    }
    std::sort(listing.begin(), listing.end());
    tree.update("input " + std::to_string(k) + "\n");
    for (const auto& [path, hash] : listing) tree.update(path + " " + hash + "\n");
  }
  return tree.hex();
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command}, {"argv", argv},       {"config", config},
          {"seed", seed},       {"input_hash", input_hash}, {"inputs", inputs},
          {"outputs", outputs}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
    m.config = j.value("config", nlohmann::json::object());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.input_hash = j.value("input_hash", "");
    m.inputs = j.value("inputs", std::vector<std::string>{});
    m.outputs = j.value("outputs", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("run manifest: " + std::string(e.what()));
  }
  return m;
}

void RunManifest::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace synbrain
