#pragma once

#include <memory>
#include <string>
#include <utility>

#include "nmt/archive.hpp"
#include "nmt/decoder.hpp"

namespace nmt {

inline constexpr const char *kBindEnvVar = "NMT_BIND";

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t max_sentences = 64;
  std::size_t max_words = 256;  // per sentence
  std::size_t threads = 8;
  DecodeConfig decode;
  std::size_t budget_tokens = kDefaultTokenBudget;
};

// "host:port" or ":port". Throws ConfigError.
std::pair<std::string, int> parse_bind_address(const std::string &address);
// The NMT_BIND environment variable wins over `address` when set.
std::string effective_bind_address(const std::string &address);

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

// POST /translate {"src_lang": "xx", "text": "..." | ["...", ...]}
//   -> {"translations": [...], "model_version": "...", "latency_ms": n}
// GET /health -> {"status": "ok", "model_version": ..., "name": ...,
//                 "source_languages": [...]}
// 400 for malformed requests or unknown languages, 413 for oversized ones.
class TranslationServer {
 public:
  TranslationServer(const ModelBundle &bundle, ServerOptions options);
  ~TranslationServer();

  HttpReply handle_translate(const std::string &body) const;
  HttpReply handle_health() const;

  // Binds, then serves until stop(). Throws IoError when binding fails.
  void listen();
  // Binds without serving; returns the bound port.
  int bind();
  // Serves on a socket from bind().
  void serve();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace nmt
