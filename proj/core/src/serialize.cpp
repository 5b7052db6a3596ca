#include "amam/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace amam {

namespace {

using nlohmann::json;

void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

void write_amtn(const std::filesystem::path& path, const Tensor& tensor) {
  const Shape s = tensor.shape();
  std::string bytes;
  bytes.reserve(21 + 4 * tensor.numel());
  bytes += "AMTN";
  bytes.push_back(0x01);
  put_u32le(bytes, static_cast<std::uint32_t>(s.n));
  put_u32le(bytes, static_cast<std::uint32_t>(s.c));
  put_u32le(bytes, static_cast<std::uint32_t>(s.h));
  put_u32le(bytes, static_cast<std::uint32_t>(s.w));
  const double* data = tensor.data();
  for (std::size_t i = 0; i < tensor.numel(); ++i) {
    const float f = static_cast<float>(data[i]);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32le(bytes, bits);
  }
  write_text_file(path, bytes);
}

Tensor read_amtn(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  if (bytes.size() < 21 || bytes.compare(0, 4, "AMTN") != 0) {
    throw IoError(path.string() + ": not an AMTN file (bad magic)");
  }
  if (static_cast<unsigned char>(bytes[4]) != 0x01) {
    throw IoError(path.string() + ": unsupported AMTN version " +
                  std::to_string(static_cast<unsigned char>(bytes[4])));
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + 5;
  const Shape s{static_cast<int>(get_u32le(p)), static_cast<int>(get_u32le(p + 4)),
                static_cast<int>(get_u32le(p + 8)), static_cast<int>(get_u32le(p + 12))};
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw IoError(path.string() + ": invalid dims " + to_string(s));
  }
  const std::size_t count = s.numel();
  if (bytes.size() != 21 + 4 * count) {
    throw IoError(path.string() + ": payload size " + std::to_string(bytes.size() - 21) +
                  " does not match dims " + to_string(s));
  }
  std::vector<double> data(count);
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data()) + 21;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get_u32le(payload + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    data[i] = static_cast<double>(f);
  }
  return Tensor::from_vector(s, std::move(data));
}

// ---- module configuration ----------------------------------------------------

AmamConfig config_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top-level value must be an object");
  AmamConfig cfg;
  try {
    if (doc.contains("levels")) cfg.levels = doc.at("levels").get<std::vector<int>>();
    if (doc.contains("heads")) cfg.heads = doc.at("heads").get<int>();
    if (doc.contains("fusion_mode")) {
      cfg.fusion_mode = fusion_mode_from_string(doc.at("fusion_mode").get<std::string>());
    }
    if (doc.contains("enabled_me")) cfg.enabled_me = doc.at("enabled_me").get<bool>();
    if (doc.contains("enabled_aa")) cfg.enabled_aa = doc.at("enabled_aa").get<bool>();
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

AmamConfig config_from_json_file(const std::filesystem::path& path) {
  return config_from_json_text(read_text_file(path));
}

std::string config_to_json(const AmamConfig& cfg) {
  json doc;
  doc["levels"] = cfg.levels;
  doc["heads"] = cfg.heads;
  doc["fusion_mode"] = to_string(cfg.fusion_mode);
  doc["enabled_me"] = cfg.enabled_me;
  doc["enabled_aa"] = cfg.enabled_aa;
  doc["seed"] = cfg.seed;
  return doc.dump(2) + "\n";
}

// ---- parameter container ------------------------------------------------------

namespace {

std::string decimal_string(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::SiLU: return "silu";
    case Activation::None: return "none";
  }
  throw ConfigError("unknown activation");
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::ReLU;
  if (name == "silu") return Activation::SiLU;
  if (name == "none") return Activation::None;
  throw ConfigError("unknown activation '" + name + "'");
}

void save_tensor(const std::filesystem::path& dir, json& tensors, const std::string& name,
                 const Tensor& t) {
  const std::string file = name + ".amtn";
  write_amtn(dir / file, t);
  tensors[name] = file;
}

Tensor load_tensor(const std::filesystem::path& dir, const json& tensors,
                   const std::string& name, bool requires_grad) {
  if (!tensors.contains(name)) {
    throw IoError("params manifest: missing tensor entry '" + name + "'");
  }
  Tensor raw = read_amtn(dir / tensors.at(name).get<std::string>());
  if (!requires_grad) return raw;
  std::vector<double> data(raw.data(), raw.data() + raw.numel());
  return Tensor::from_vector(raw.shape(), std::move(data), true);
}

json cba_meta(const ConvBnAct& layer) {
  json meta;
  meta["in_channels"] = layer.in_channels();
  meta["out_channels"] = layer.out_channels();
  meta["kernel_size"] = layer.kernel.shape().h;
  meta["stride"] = layer.stride;
  meta["padding"] = layer.padding;
  meta["bn_eps"] = layer.bn_eps;
  meta["activation"] = activation_name(layer.act);
  return meta;
}

void save_cba(const std::filesystem::path& dir, json& tensors, const std::string& prefix,
              const ConvBnAct& layer) {
  save_tensor(dir, tensors, prefix + ".kernel", layer.kernel);
  save_tensor(dir, tensors, prefix + ".bias", layer.bias);
  save_tensor(dir, tensors, prefix + ".bn_gamma", layer.bn_gamma);
  save_tensor(dir, tensors, prefix + ".bn_beta", layer.bn_beta);
  save_tensor(dir, tensors, prefix + ".bn_mean", layer.bn_mean);
  save_tensor(dir, tensors, prefix + ".bn_var", layer.bn_var);
}

ConvBnAct load_cba(const std::filesystem::path& dir, const json& tensors,
                   const std::string& prefix, const json& meta) {
  ConvBnAct layer;
  layer.kernel = load_tensor(dir, tensors, prefix + ".kernel", true);
  layer.bias = load_tensor(dir, tensors, prefix + ".bias", true);
  layer.bn_gamma = load_tensor(dir, tensors, prefix + ".bn_gamma", true);
  layer.bn_beta = load_tensor(dir, tensors, prefix + ".bn_beta", true);
  layer.bn_mean = load_tensor(dir, tensors, prefix + ".bn_mean", false);
  layer.bn_var = load_tensor(dir, tensors, prefix + ".bn_var", false);
  layer.bn_eps = meta.at("bn_eps").get<double>();
  layer.act = activation_from_name(meta.at("activation").get<std::string>());
  layer.stride = meta.at("stride").get<int>();
  layer.padding = meta.at("padding").get<int>();
  return layer;
}

}  // namespace

void save_amam_params(const std::filesystem::path& dir, const AmamConfig& cfg,
                      const AmamParams& params) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "amam-params-v1";
  manifest["config"] = json::parse(config_to_json(cfg));
  json tensors = json::object();

  json me_list = json::array();
  for (std::size_t i = 0; i < params.me.size(); ++i) {
    const MeBlockParams& block = params.me[i];
    const std::string prefix = "me" + std::to_string(i);
    json entry;
    entry["channels"] = block.channels;
    entry["cur"] = cba_meta(block.cbr_cur);
    save_cba(dir, tensors, prefix + ".cur", block.cbr_cur);
    if (block.cbr_shallow) {
      entry["shallow"] = cba_meta(*block.cbr_shallow);
      save_cba(dir, tensors, prefix + ".shallow", *block.cbr_shallow);
    }
    if (block.cbr_deep) {
      entry["deep"] = cba_meta(*block.cbr_deep);
      save_cba(dir, tensors, prefix + ".deep", *block.cbr_deep);
    }
    entry["fuse"] = cba_meta(block.cbr_fuse);
    save_cba(dir, tensors, prefix + ".fuse", block.cbr_fuse);
    me_list.push_back(std::move(entry));
  }
  manifest["me"] = std::move(me_list);

  json aa_list = json::array();
  for (std::size_t i = 0; i < params.aa.size(); ++i) {
    const AaBlockParams& block = params.aa[i];
    const std::string prefix = "aa" + std::to_string(i);
    json entry;
    entry["channels"] = block.channels;
    entry["heads"] = block.heads;
    entry["d_qk"] = block.d_qk;
    entry["fusion_mode"] = to_string(block.fusion);
    json logits = json::array();
    for (const Tensor& logit : block.alpha_logits) logits.push_back(decimal_string(logit.item()));
    entry["alpha_logits"] = std::move(logits);
    for (int h = 0; h < block.heads; ++h) {
      const std::string hp = prefix + ".head" + std::to_string(h);
      save_tensor(dir, tensors, hp + ".wq", block.head[h].w_q);
      save_tensor(dir, tensors, hp + ".wk", block.head[h].w_k);
      save_tensor(dir, tensors, hp + ".wv", block.head[h].w_v);
    }
    for (std::size_t b = 0; b < block.concat_fuse.size(); ++b) {
      save_tensor(dir, tensors, prefix + ".boundary" + std::to_string(b) + ".fuse",
                  block.concat_fuse[b]);
    }
    save_tensor(dir, tensors, prefix + ".wp", block.w_p);
    aa_list.push_back(std::move(entry));
  }
  manifest["aa"] = std::move(aa_list);
  manifest["tensors"] = std::move(tensors);

  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

AmamParams load_amam_params(const std::filesystem::path& dir, const AmamConfig& cfg) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw IoError("params manifest: invalid JSON: " + std::string(e.what()));
  }
  try {
    const json& tensors = manifest.at("tensors");
    AmamParams params;
    const json& me_list = manifest.at("me");
    for (std::size_t i = 0; i < me_list.size(); ++i) {
      const json& entry = me_list[i];
      const std::string prefix = "me" + std::to_string(i);
      MeBlockParams block;
      block.channels = entry.at("channels").get<int>();
      block.cbr_cur = load_cba(dir, tensors, prefix + ".cur", entry.at("cur"));
      if (entry.contains("shallow")) {
        block.cbr_shallow = load_cba(dir, tensors, prefix + ".shallow", entry.at("shallow"));
      }
      if (entry.contains("deep")) {
        block.cbr_deep = load_cba(dir, tensors, prefix + ".deep", entry.at("deep"));
      }
      block.cbr_fuse = load_cba(dir, tensors, prefix + ".fuse", entry.at("fuse"));
      params.me.push_back(std::move(block));
    }
    const json& aa_list = manifest.at("aa");
    for (std::size_t i = 0; i < aa_list.size(); ++i) {
      const json& entry = aa_list[i];
      const std::string prefix = "aa" + std::to_string(i);
      AaBlockParams block;
      block.channels = entry.at("channels").get<int>();
      block.heads = entry.at("heads").get<int>();
      block.d_qk = entry.at("d_qk").get<int>();
      block.fusion = fusion_mode_from_string(entry.at("fusion_mode").get<std::string>());
      for (const json& logit : entry.at("alpha_logits")) {
        block.alpha_logits.push_back(
            Tensor::scalar(std::stod(logit.get<std::string>()), true));
      }
      for (int h = 0; h < block.heads; ++h) {
        const std::string hp = prefix + ".head" + std::to_string(h);
        AaHeadParams head;
        head.w_q = load_tensor(dir, tensors, hp + ".wq", true);
        head.w_k = load_tensor(dir, tensors, hp + ".wk", true);
        head.w_v = load_tensor(dir, tensors, hp + ".wv", true);
        block.head.push_back(std::move(head));
      }
      if (block.fusion == FusionMode::Concat) {
        for (int b = 0; b + 1 < block.heads; ++b) {
          block.concat_fuse.push_back(load_tensor(
              dir, tensors, prefix + ".boundary" + std::to_string(b) + ".fuse", true));
        }
      }
      block.w_p = load_tensor(dir, tensors, prefix + ".wp", true);
      params.aa.push_back(std::move(block));
    }
    if (params.me.size() != cfg.levels.size() || params.aa.size() != cfg.levels.size()) {
      throw IoError("params manifest: level count does not match the configuration");
    }
    return params;
  } catch (const json::exception& e) {
    throw IoError("params manifest: " + std::string(e.what()));
  }
}

// ---- detection data -----------------------------------------------------------

EvalData detections_from_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("detections: invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("images") || !doc.at("images").is_array()) {
    throw ConfigError("detections: expected an object with an \"images\" array");
  }
  EvalData data;
  try {
    for (const json& image : doc.at("images")) {
      ImageEval entry;
      entry.id = image.at("id").get<std::string>();
      for (const json& gt : image.value("gt", json::array())) {
        if (!gt.is_array() || gt.size() != 4) {
          throw ConfigError("detections: image '" + entry.id +
                            "': gt entries must be [x1,y1,x2,y2]");
        }
        Box box{gt[0].get<double>(), gt[1].get<double>(), gt[2].get<double>(),
                gt[3].get<double>()};
        box.validate();
        entry.gt.push_back(box);
      }
      for (const json& det : image.value("det", json::array())) {
        if (!det.is_array() || det.size() != 5) {
          throw ConfigError("detections: image '" + entry.id +
                            "': det entries must be [x1,y1,x2,y2,score]");
        }
        DetectionRecord record;
        record.image_id = entry.id;
        record.box = Box{det[0].get<double>(), det[1].get<double>(), det[2].get<double>(),
                         det[3].get<double>()};
        record.box.validate();
        record.score = det[4].get<double>();
        if (record.score < 0.0 || record.score > 1.0) {
          throw ConfigError("detections: image '" + entry.id + "': score " +
                            std::to_string(record.score) + " outside [0,1]");
        }
        entry.det.push_back(std::move(record));
      }
      data.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("detections: ") + e.what());
  }
  return data;
}

EvalData detections_from_json_file(const std::filesystem::path& path) {
  return detections_from_json_text(read_text_file(path));
}

std::string detections_to_json(const EvalData& data) {
  json images = json::array();
  for (const ImageEval& image : data) {
    json entry;
    entry["id"] = image.id;
    json gt = json::array();
    for (const Box& box : image.gt) gt.push_back({box.x_min, box.y_min, box.x_max, box.y_max});
    entry["gt"] = std::move(gt);
    json det = json::array();
    for (const DetectionRecord& record : image.det) {
      det.push_back({record.box.x_min, record.box.y_min, record.box.x_max, record.box.y_max,
                     record.score});
    }
    entry["det"] = std::move(det);
    images.push_back(std::move(entry));
  }
  json doc;
  doc["images"] = std::move(images);
  return doc.dump(2) + "\n";
}

namespace {
std::string fixed6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}
}  // namespace

std::string report_to_json(const EvalReport& report) {
  std::string out = "{\n";
  out += "  \"precision\": " + fixed6(report.precision) + ",\n";
  out += "  \"recall\": " + fixed6(report.recall) + ",\n";
  out += std::string("  \"precision_degenerate\": ") +
         (report.precision_degenerate ? "true" : "false") + ",\n";
  out += std::string("  \"recall_degenerate\": ") +
         (report.recall_degenerate ? "true" : "false") + ",\n";
  out += "  \"ap_50\": " + fixed6(report.ap_50) + ",\n";
  out += "  \"ap_50_95\": " + fixed6(report.ap_50_95) + ",\n";
  out += "  \"ap_per_threshold\": [";
  for (std::size_t i = 0; i < report.ap_per_threshold.size(); ++i) {
    if (i) out += ", ";
    out += fixed6(report.ap_per_threshold[i]);
  }
  out += "]\n}\n";
  return out;
}

// ---- CSV ----------------------------------------------------------------------

std::string format_sig9(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

std::string trace_to_csv(const TrainTrace& trace) {
  std::string out = "iter,lr,loss\n";
  for (std::size_t i = 0; i < trace.loss.size(); ++i) {
    out += std::to_string(i) + "," + format_sig9(trace.lr[i]) + "," +
           format_sig9(trace.loss[i]) + "\n";
  }
  return out;
}

std::string pr_curve_to_csv(const std::vector<std::array<double, 2>>& points) {
  std::string out = "recall,precision\n";
  for (const auto& [recall, precision] : points) {
    out += format_sig9(recall) + "," + format_sig9(precision) + "\n";
  }
  return out;
}

}  // namespace amam
