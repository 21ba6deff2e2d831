#include "deltar/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace deltar::nn {

namespace {

constexpr char kMagic[4] = {'D', 'L', 'T', 'R'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const DeltarModel& model) {
  json header;
  header["config"] = to_json(model.config());
  json params = json::array();
  for (const auto& [name, t] : model.params().items())
    params.push_back(json{{"name", name}, {"shape", t.shape()}});
  header["params"] = params;
  const std::string head = header.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("checkpoint: cannot open " + tmp.string() + " for writing");
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u32(os, static_cast<std::uint32_t>(head.size()));
    os.write(head.data(), static_cast<std::streamsize>(head.size()));
    std::vector<float> buf;
    for (const auto& [name, t] : model.params().items()) {
      buf.resize(static_cast<std::size_t>(t.numel()));
      for (Eigen::Index i = 0; i < t.numel(); ++i)
        buf[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
      os.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!os) throw DataError("checkpoint: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("checkpoint: rename failed: " + ec.message());
}

DeltarModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) throw DataError("checkpoint: unsupported version");
  const std::uint32_t head_len = read_u32(is);
  std::string head(head_len, '\0');
  is.read(head.data(), static_cast<std::streamsize>(head_len));
  if (!is) throw DataError("checkpoint: truncated header");

  json header;
  try {
    header = json::parse(head);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  }
  FusionConfig cfg = fusion_config_from_json(header.at("config"));
  DeltarModel model(cfg, 0);

  const json& params = header.at("params");
  auto& items = model.params().items();
  if (params.size() != items.size())
    throw DataError("checkpoint: parameter count does not match the config");
  std::vector<float> buf;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string name = params[i].at("name").get<std::string>();
    const auto shape = params[i].at("shape").get<std::vector<int>>();
    if (name != items[i].first || shape != items[i].second.shape())
      throw DataError("checkpoint: parameter mismatch at " + name);
    Tensor& t = items[i].second;
    buf.resize(static_cast<std::size_t>(t.numel()));
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw DataError("checkpoint: truncated parameter blob " + name);
    for (Eigen::Index k = 0; k < t.numel(); ++k)
      t.raw()[k] = static_cast<double>(buf[static_cast<std::size_t>(k)]);
  }
  return model;
}

}  // namespace deltar::nn
