#include "jepa/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "jepa/errors.hpp"

namespace jepa {

namespace {

constexpr std::array<char, 8> kMagic{'J', 'E', 'P', 'A', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) throw FormatError("truncated checkpoint header");
  return value;
}

}  // namespace

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path, const nlohmann::json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const StateDict state = bundle.state();
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : state) {
    const std::uint64_t bytes = static_cast<std::uint64_t>(tensor.numel()) * sizeof(double);
    index.push_back({{"name", name}, {"shape", tensor.shape()}, {"dtype", "float64"}, {"offset", offset}, {"bytes", bytes}});
    offset += bytes;
  }
  nlohmann::json header = {{"format_version", kCheckpointVersion},
                           {"model", bundle.config},
                           {"decoder_trained", bundle.decoder_trained},
                           {"latent_checksum", bundle.latent_checksum()},
                           {"tensors", index},
                           {"metadata", metadata}};
  const std::string text = header.dump();

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, tensor] : state) {
      out.write(reinterpret_cast<const char*>(tensor.ptr()), static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!out) throw FormatError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto file = std::filesystem::is_directory(path) ? path / kCheckpointFile : path;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + file.string());

  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError(file.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = get<std::uint64_t>(in);
  if (header_len > (1ULL << 30)) throw FormatError("implausible checkpoint header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) throw FormatError("truncated checkpoint header");

  nlohmann::json header;
  ModelConfig config;
  try {
    header = nlohmann::json::parse(text);
    config = header.at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const auto data_start = in.tellg();
  StateDict state;
  try {
    for (const auto& entry : header.at("tensors")) {
      if (entry.at("dtype") != "float64") throw FormatError("unsupported tensor dtype in checkpoint");
      Tensor t(entry.at("shape").get<Shape>());
      const auto bytes = entry.at("bytes").get<std::uint64_t>();
      if (bytes != static_cast<std::uint64_t>(t.numel()) * sizeof(double)) throw FormatError("tensor size mismatch in checkpoint");
      in.seekg(data_start + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
      if (!in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(bytes))) {
        throw FormatError("truncated checkpoint data");
      }
      state.emplace(entry.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint tensor index: ") + e.what());
  }

  LoadedCheckpoint out{ModelBundle(config, 0), header.value("metadata", nlohmann::json::object())};
  out.bundle.load_state(state);
  out.bundle.decoder_trained = header.value("decoder_trained", false);
  if (header.contains("latent_checksum") && header["latent_checksum"].get<std::uint64_t>() != out.bundle.latent_checksum()) {
    throw FormatError("checkpoint checksum mismatch");
  }
  return out;
}

}  // namespace jepa
