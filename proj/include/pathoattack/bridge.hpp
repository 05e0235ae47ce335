#pragma once

// Pretrained vision-language checkpoints served by a Python helper process.
//
// The helper (tools/plip_bridge.py) loads the checkpoint with PyTorch and
// answers framed requests over a socketpair: a one-line JSON header followed
// by a raw little-endian float64 payload. The zero-shot head, the loss and the
// chain rule stay on this side; the helper only supplies embeddings and
// vector-Jacobian products with respect to the raw [0, 1] image.

#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pathoattack/core.hpp"
#include "pathoattack/model.hpp"

extern char** environ;

namespace pathoattack {

#ifndef PATHOATTACK_BRIDGE_SCRIPT_DEFAULT
#define PATHOATTACK_BRIDGE_SCRIPT_DEFAULT "plip_bridge.py"
#endif

inline constexpr const char* kWeightsCacheEnv = "PATHOATTACK_WEIGHTS_CACHE";
inline constexpr const char* kBridgeScriptEnv = "PATHOATTACK_BRIDGE_SCRIPT";
inline constexpr const char* kPythonEnv = "PATHOATTACK_PYTHON";

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return (v && *v) ? std::string(v) : std::move(fallback);
}

struct BridgeOptions {
  std::string checkpoint;  // local directory, hub identifier, or "toy:SEED"
  std::string device = "cpu";
  std::string cache_dir = env_or(kWeightsCacheEnv, "");
  std::string script = env_or(kBridgeScriptEnv, PATHOATTACK_BRIDGE_SCRIPT_DEFAULT);
  std::string python = env_or(kPythonEnv, "python3");
};

/// One long-lived helper process. Requests are serialized internally.
class BridgeProcess {
 public:
  explicit BridgeProcess(const BridgeOptions& opts) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
      throw Error(std::string("socketpair failed: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);

    std::vector<std::string> args = {opts.python, opts.script, "--checkpoint", opts.checkpoint, "--device",
                                     opts.device};
    if (!opts.cache_dir.empty()) {
      args.emplace_back("--cache-dir");
      args.push_back(opts.cache_dir);
    }
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    const int rc = ::posix_spawnp(&pid_, opts.python.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    if (rc != 0) {
      ::close(fds[0]);
      throw Error("cannot start '" + opts.python + "': " + std::strerror(rc));
    }
    fd_ = fds[0];
    try {
      info_ = request({{"op", "info"}}, {}).first;
    } catch (...) {
      shutdown();
      throw;
    }
  }

  BridgeProcess(const BridgeProcess&) = delete;
  BridgeProcess& operator=(const BridgeProcess&) = delete;
  ~BridgeProcess() { shutdown(); }

  const nlohmann::json& info() const { return info_; }

  /// Sends header + payload, returns the reply header and payload.
  std::pair<nlohmann::json, std::vector<double>> request(nlohmann::json header,
                                                         const std::vector<double>& payload) {
    std::lock_guard lock(mutex_);
    header["payload"] = payload.size();
    const std::string line = header.dump() + "\n";
    send_all(line.data(), line.size());
    if (!payload.empty()) send_all(payload.data(), payload.size() * sizeof(double));

    nlohmann::json reply = nlohmann::json::parse(read_line());
    if (!reply.value("ok", false)) {
      throw Error("model bridge error: " + reply.value("error", std::string("unknown failure")));
    }
    std::vector<double> data(reply.value("payload", std::size_t{0}));
    if (!data.empty()) recv_all(data.data(), data.size() * sizeof(double));
    return {std::move(reply), std::move(data)};
  }

 private:
  void send_all(const void* buf, std::size_t n) {
    const auto* p = static_cast<const char*>(buf);
    while (n > 0) {
      const ssize_t w = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (w < 0 && errno == EINTR) continue;
      if (w <= 0) throw Error("model bridge connection lost while sending");
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }

  void recv_all(void* buf, std::size_t n) {
    auto* p = static_cast<char*>(buf);
    while (n > 0) {
      if (!pending_.empty()) {
        const std::size_t take = std::min(n, pending_.size());
        std::memcpy(p, pending_.data(), take);
        pending_.erase(0, take);
        p += take;
        n -= take;
        continue;
      }
      fill();
    }
  }

  std::string read_line() {
    for (;;) {
      if (auto pos = pending_.find('\n'); pos != std::string::npos) {
        std::string line = pending_.substr(0, pos);
        pending_.erase(0, pos + 1);
        return line;
      }
      fill();
    }
  }

  void fill() {
    char chunk[1 << 16];
    ssize_t r;
    do {
      r = ::recv(fd_, chunk, sizeof chunk, 0);
    } while (r < 0 && errno == EINTR);
    if (r <= 0) throw Error("model bridge process exited unexpectedly");
    pending_.append(chunk, static_cast<std::size_t>(r));
  }

  void shutdown() {
    if (fd_ >= 0) {
      const std::string quit = "{\"op\":\"quit\",\"payload\":0}\n";
      ::send(fd_, quit.data(), quit.size(), MSG_NOSIGNAL);
      ::close(fd_);
      fd_ = -1;
    }
    if (pid_ > 0) {
      int status = 0;
      ::waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  pid_t pid_ = -1;
  int fd_ = -1;
  std::string pending_;
  nlohmann::json info_;
  std::mutex mutex_;
};

/// Image and text towers of a checkpoint behind a BridgeProcess.
class BridgeEncoder final : public ImageEncoder, public TextEncoder {
 public:
  explicit BridgeEncoder(const BridgeOptions& opts) : process_(std::make_shared<BridgeProcess>(opts)) {
    dim_ = process_->info().at("dim").get<std::size_t>();
    if (process_->info().contains("logit_scale") && !process_->info()["logit_scale"].is_null()) {
      logit_scale_ = process_->info()["logit_scale"].get<double>();
    }
  }

  std::size_t dim() const override { return dim_; }
  bool exclusive() const override { return true; }
  std::optional<double> temperature() const override { return logit_scale_; }

  std::vector<double> embed(const ImageTensor& image) const override {
    auto [reply, data] = process_->request({{"op", "embed"}, {"shape", shape_json(image)}}, image.tensor().vector());
    check_dim(data.size());
    return data;
  }

  EmbeddingVjp embed_vjp(const ImageTensor& image, std::span<const double> cotangent) const override {
    if (cotangent.size() != dim_) throw InvalidArgument("cotangent dimension mismatch");
    std::vector<double> payload = image.tensor().vector();
    payload.insert(payload.end(), cotangent.begin(), cotangent.end());
    auto [reply, data] = process_->request({{"op", "vjp"}, {"shape", shape_json(image)}}, payload);
    if (data.size() != dim_ + image.size()) throw Error("model bridge returned a malformed gradient");
    EmbeddingVjp out;
    out.embedding.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(dim_));
    out.gradient = Tensor(image.shape(), std::vector<double>(data.begin() + static_cast<std::ptrdiff_t>(dim_), data.end()));
    return out;
  }

  std::vector<std::vector<double>> encode(const std::vector<std::string>& prompts) const override {
    ++text_encodes_;
    auto [reply, data] = process_->request({{"op", "encode_text"}, {"prompts", prompts}}, {});
    const auto rows = reply.at("rows").get<std::size_t>();
    const auto d = reply.at("dim").get<std::size_t>();
    if (rows != prompts.size() || d != dim_ || data.size() != rows * d) {
      throw Error("text embedding dimension mismatch: bridge returned " + std::to_string(rows) + "x" +
                  std::to_string(d) + ", expected " + std::to_string(prompts.size()) + "x" + std::to_string(dim_));
    }
    std::vector<std::vector<double>> out(rows);
    for (std::size_t k = 0; k < rows; ++k) {
      out[k].assign(data.begin() + static_cast<std::ptrdiff_t>(k * d), data.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    }
    return out;
  }

  std::size_t text_encodes() const { return text_encodes_; }

 private:
  static nlohmann::json shape_json(const ImageTensor& image) {
    return {image.shape().channels, image.shape().height, image.shape().width};
  }

  void check_dim(std::size_t got) const {
    if (got != dim_) {
      throw Error("image embedding dimension mismatch: got " + std::to_string(got) + ", expected " +
                  std::to_string(dim_));
    }
  }

  std::shared_ptr<BridgeProcess> process_;
  std::size_t dim_ = 0;
  std::optional<double> logit_scale_;
  mutable std::size_t text_encodes_ = 0;
};

struct PretrainedOptions {
  std::string prompt_template = kDefaultPromptTemplate;
  std::vector<std::string> prompt_labels;  // phrases substituted into the template; defaults to label names
  std::optional<double> temperature;       // overrides the checkpoint's logit scale
  std::string cache_dir = env_or(kWeightsCacheEnv, "");
};

/// Zero-shot classifier over a pretrained checkpoint. Text embeddings are
/// computed once for the label set through a caching encoder.
inline std::shared_ptr<ZeroShotClassifier> load_pretrained_adapter(const std::string& checkpoint,
                                                                   const std::string& device, const LabelSet& labels,
                                                                   const PretrainedOptions& opts = {}) {
  BridgeOptions bo;
  bo.checkpoint = checkpoint;
  bo.device = device;
  bo.cache_dir = opts.cache_dir;
  auto encoder = std::make_shared<BridgeEncoder>(bo);
  CachingTextEncoder text(encoder);
  const auto& phrases = opts.prompt_labels.empty() ? labels.names() : opts.prompt_labels;
  return ZeroShotClassifier::from_prompts(encoder, text, labels, build_prompts(phrases, opts.prompt_template),
                                          opts.temperature);
}

}  // namespace pathoattack
