#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fcns/error.hpp"
#include "fcns/net.hpp"

namespace fcns::net {

using nlohmann::json;

namespace {

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_f32_le(std::vector<std::uint8_t>& out, float f) {
  put_u32_le(out, std::bit_cast<std::uint32_t>(f));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Model& model) {
  check_parameters(model.config, model.params);
  json entries = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, array] : model.params) {
    const std::uint64_t length = array.size() * sizeof(float);
    entries[name] = {{"shape", array.shape},
                     {"dtype", "f32"},
                     {"offset", offset},
                     {"length", length}};
    offset += length;
  }
  const json header = {{"format_version", kCheckpointVersion},
                       {"net_config", to_json(model.config)},
                       {"params", entries}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic),
                                std::end(kCheckpointMagic));
  out.reserve(12 + text.size() + offset);
  put_u32_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, array] : model.params) {
    for (float v : array.values) put_f32_le(out, v);
  }
  return out;
}

Model decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) raise(ErrorKind::kFormat, "checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    raise(ErrorKind::kFormat, "bad checkpoint magic");
  }
  const std::uint32_t header_len = get_u32_le(bytes.data() + 8);
  if (bytes.size() < 12ULL + header_len) {
    raise(ErrorKind::kFormat, "checkpoint header truncated");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
  } catch (const json::exception& e) {
    raise(ErrorKind::kFormat, std::string("checkpoint header: ") + e.what());
  }
  const auto data = bytes.subspan(12 + header_len);

  Model model;
  try {
    if (header.at("format_version").get<int>() != kCheckpointVersion) {
      raise(ErrorKind::kFormat, "unsupported checkpoint version " +
                                    header.at("format_version").dump());
    }
    model.config = net_config_from_json(header.at("net_config"));
    const auto& entries = header.at("params");
    const auto layout = parameter_layout(model.config);
    if (entries.size() != layout.size()) {
      raise(ErrorKind::kFormat, "checkpoint lists " +
                                    std::to_string(entries.size()) +
                                    " arrays, configuration implies " +
                                    std::to_string(layout.size()));
    }
    for (const auto& spec : layout) {
      if (!entries.contains(spec.name)) {
        raise(ErrorKind::kFormat, "checkpoint lacks " + spec.name);
      }
      const auto& e = entries.at(spec.name);
      const auto shape = e.at("shape").get<std::vector<int>>();
      if (shape != spec.shape) {
        raise(ErrorKind::kFormat, spec.name + " shape differs from configuration");
      }
      if (e.at("dtype").get<std::string>() != "f32") {
        raise(ErrorKind::kFormat, spec.name + " has unsupported dtype");
      }
      std::size_t count = 1;
      for (int d : shape) count *= static_cast<std::size_t>(d);
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto length = e.at("length").get<std::uint64_t>();
      if (length != count * sizeof(float)) {
        raise(ErrorKind::kFormat, spec.name + " length does not match shape");
      }
      if (offset > data.size() || length > data.size() - offset) {
        raise(ErrorKind::kFormat, spec.name + " data truncated");
      }
      Array<float> array;
      array.shape = shape;
      array.values.resize(count);
      const std::uint8_t* p = data.data() + offset;
      for (std::size_t i = 0; i < count; ++i) {
        array.values[i] = std::bit_cast<float>(get_u32_le(p + 4 * i));
      }
      model.params.emplace(spec.name, std::move(array));
    }
  } catch (const json::exception& e) {
    raise(ErrorKind::kFormat, std::string("checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kFormat) throw;
    raise(ErrorKind::kFormat, e.what());
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(model);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(ErrorKind::kIo, "cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::kIo, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fcns::net
