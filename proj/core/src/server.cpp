#include "nmt/server.hpp"

#include <chrono>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

#include "nmt/errors.hpp"
#include "nmt/translator.hpp"
#include "nmt/utf8.hpp"

namespace nmt {
namespace {

using json = nlohmann::json;

HttpReply error_reply(int status, const std::string &message) {
  // Messages may quote client bytes that are not valid UTF-8.
  return {status, json{{"error", message}}.dump(-1, ' ', false, json::error_handler_t::replace)};
}

}  // namespace

std::pair<std::string, int> parse_bind_address(const std::string &address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("bind address must be host:port, got '" + address + "'");
  std::string host = address.substr(0, colon);
  if (host.empty()) host = "0.0.0.0";
  const std::string port_text = address.substr(colon + 1);
  int port = -1;
  try {
    std::size_t used = 0;
    port = std::stoi(port_text, &used);
    if (used != port_text.size()) port = -1;
  } catch (const std::exception &) {
    port = -1;
  }
  if (port < 0 || port > 65535)
    throw ConfigError("invalid port in bind address '" + address + "'");
  return {host, port};
}

std::string effective_bind_address(const std::string &address) {
  const char *env = std::getenv(kBindEnvVar);
  return env && *env ? std::string(env) : address;
}

struct TranslationServer::Impl {
  const ModelBundle &bundle;
  ServerOptions options;
  Translator translator;
  httplib::Server http;

  Impl(const ModelBundle &b, ServerOptions o)
      : bundle(b), options(std::move(o)), translator(b) {}
};

TranslationServer::TranslationServer(const ModelBundle &bundle, ServerOptions options)
    : impl_(std::make_unique<Impl>(bundle, std::move(options))) {
  impl_->options.decode.validate();
  auto &http = impl_->http;
  const std::size_t threads = impl_->options.threads;
  http.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  http.Post("/translate", [this](const httplib::Request &req, httplib::Response &res) {
    const HttpReply reply = handle_translate(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  http.Get("/health", [this](const httplib::Request &, httplib::Response &res) {
    const HttpReply reply = handle_health();
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
}

TranslationServer::~TranslationServer() { stop(); }

HttpReply TranslationServer::handle_health() const {
  const auto &b = impl_->bundle;
  return {200, json{{"status", "ok"},
                    {"model_version", b.model_version},
                    {"name", b.metadata.name},
                    {"source_languages", b.metadata.source_languages}}
                   .dump()};
}

HttpReply TranslationServer::handle_translate(const std::string &body) const {
  const auto start = std::chrono::steady_clock::now();
  const ServerOptions &opts = impl_->options;
  json request;
  try {
    request = json::parse(body);
  } catch (const json::parse_error &e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what());
  }
  if (!request.is_object()) return error_reply(400, "request must be a JSON object");
  std::string language;
  if (request.contains("src_lang")) {
    if (!request["src_lang"].is_string()) return error_reply(400, "src_lang must be a string");
    language = request["src_lang"].get<std::string>();
  }
  std::vector<std::string> lines;
  const auto text = request.find("text");
  if (text == request.end()) return error_reply(400, "missing field 'text'");
  if (text->is_string()) {
    lines.push_back(text->get<std::string>());
  } else if (text->is_array()) {
    for (const auto &item : *text) {
      if (!item.is_string()) return error_reply(400, "text entries must be strings");
      lines.push_back(item.get<std::string>());
    }
  } else {
    return error_reply(400, "text must be a string or a list of strings");
  }
  if (lines.size() > opts.max_sentences)
    return error_reply(413, "too many sentences: " + std::to_string(lines.size()) +
                                " > " + std::to_string(opts.max_sentences));
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (utf8::find_invalid(lines[i]))
      return error_reply(400, "sentence " + std::to_string(i) + " is not valid UTF-8");
    const std::size_t words = utf8::split_whitespace(lines[i]).size();
    if (words > opts.max_words)
      return error_reply(413, "sentence " + std::to_string(i) + " has " +
                                  std::to_string(words) + " words > " +
                                  std::to_string(opts.max_words));
  }
  std::vector<std::string> translations;
  try {
    impl_->translator.resolve_language(language);
    translations = impl_->translator.translate(lines, language, opts.decode, opts.budget_tokens);
  } catch (const ConfigError &e) {
    return error_reply(400, e.what());
  } catch (const DataError &e) {
    return error_reply(400, e.what());
  } catch (const DimensionError &e) {
    return error_reply(413, e.what());  // longer than the model's positions
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
  return {200, json{{"translations", translations},
                    {"model_version", impl_->bundle.model_version},
                    {"latency_ms", ms}}
                   .dump()};
}

int TranslationServer::bind() {
  const auto &o = impl_->options;
  const int port = o.port == 0 ? impl_->http.bind_to_any_port(o.host)
                               : (impl_->http.bind_to_port(o.host, o.port) ? o.port : -1);
  if (port < 0)
    throw IoError(o.host + ":" + std::to_string(o.port), "cannot bind");
  return port;
}

void TranslationServer::serve() { impl_->http.listen_after_bind(); }

void TranslationServer::listen() {
  bind();
  serve();
}

void TranslationServer::stop() {
  if (impl_) impl_->http.stop();
}

bool TranslationServer::running() const { return impl_->http.is_running(); }

}  // namespace nmt
