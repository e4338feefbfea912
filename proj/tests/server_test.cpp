#include <cstdlib>
#include <future>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>
#include <zlib.h>

#include "bundle_fixture.hpp"
#include "nmt/errors.hpp"
#include "nmt/server.hpp"
#include "nmt/translator.hpp"

namespace nmt {
namespace {

using json = nlohmann::json;
using testing::toy_bundle;
using testing::toy_source_lines;

json body_of(const HttpReply &r) { return json::parse(r.body); }

// Drops the timing field so bodies can be compared.
std::string without_latency(const std::string &body) {
  json j = json::parse(body);
  j.erase("latency_ms");
  return j.dump();
}

std::uint32_t parameter_hash(const Transformer<float> &m) {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto &[name, p] : m.parameters())
    crc = crc32(crc, reinterpret_cast<const Bytef *>(p.data().data()),
                static_cast<uInt>(p.numel() * sizeof(float)));
  return static_cast<std::uint32_t>(crc);
}

ServerOptions small_options() {
  ServerOptions o;
  o.port = 0;
  o.max_sentences = 8;
  o.max_words = 12;
  o.threads = 4;
  o.decode = {2, 0.6, 12};
  return o;
}

TEST(BindAddress, Parsing) {
  EXPECT_EQ(parse_bind_address("127.0.0.1:8080"), (std::pair<std::string, int>{"127.0.0.1", 8080}));
  EXPECT_EQ(parse_bind_address(":9000"), (std::pair<std::string, int>{"0.0.0.0", 9000}));
  EXPECT_THROW(parse_bind_address("localhost"), ConfigError);
  EXPECT_THROW(parse_bind_address("host:abc"), ConfigError);
  EXPECT_THROW(parse_bind_address("host:70000"), ConfigError);
  EXPECT_THROW(parse_bind_address("host:80x"), ConfigError);
}

TEST(BindAddress, EnvironmentOverridesFlag) {
  ::unsetenv(kBindEnvVar);
  EXPECT_EQ(effective_bind_address("1.2.3.4:5"), "1.2.3.4:5");
  ::setenv(kBindEnvVar, "0.0.0.0:7777", 1);
  EXPECT_EQ(effective_bind_address("1.2.3.4:5"), "0.0.0.0:7777");
  ::setenv(kBindEnvVar, "", 1);
  EXPECT_EQ(effective_bind_address("1.2.3.4:5"), "1.2.3.4:5");
  ::unsetenv(kBindEnvVar);
}

TEST(ServerHandlers, HealthReportsArchiveVersion) {
  const auto bundle = toy_bundle(1, {"en", "vi"});
  const TranslationServer server(bundle, small_options());
  const auto reply = server.handle_health();
  EXPECT_EQ(reply.status, 200);
  const auto j = body_of(reply);
  EXPECT_EQ(j.at("status"), "ok");
  EXPECT_EQ(j.at("model_version"), bundle.model_version);
  EXPECT_EQ(j.at("name"), "toy");
  EXPECT_EQ(j.at("source_languages"), (json{"en", "vi"}));
}

TEST(ServerHandlers, TranslateMatchesTranslator) {
  const auto bundle = toy_bundle(2, {"en"});
  const auto opts = small_options();
  const TranslationServer server(bundle, opts);
  const auto lines = toy_source_lines();
  const auto expected = Translator(bundle).translate(lines, "en", opts.decode);
  const auto reply = server.handle_translate(json{{"src_lang", "en"}, {"text", lines}}.dump());
  ASSERT_EQ(reply.status, 200) << reply.body;
  const auto j = body_of(reply);
  EXPECT_EQ(j.at("translations").get<std::vector<std::string>>(), expected);
  EXPECT_EQ(j.at("model_version"), bundle.model_version);
  EXPECT_GE(j.at("latency_ms").get<double>(), 0.0);
  // A single string is one sentence.
  const auto one = body_of(server.handle_translate(json{{"src_lang", "en"}, {"text", lines[1]}}.dump()));
  EXPECT_EQ(one.at("translations"), (json{expected[1]}));
  // The only language is the default.
  const auto bare = body_of(server.handle_translate(json{{"text", lines}}.dump()));
  EXPECT_EQ(bare.at("translations").get<std::vector<std::string>>(), expected);
}

TEST(ServerHandlers, BadRequests) {
  const auto bundle = toy_bundle(3, {"en", "vi"});
  const TranslationServer server(bundle, small_options());
  auto status = [&](const std::string &body) { return server.handle_translate(body).status; };
  EXPECT_EQ(status("{not json"), 400);
  EXPECT_EQ(status("[1, 2]"), 400);
  EXPECT_EQ(status(R"({"src_lang": "en"})"), 400);
  EXPECT_EQ(status(R"({"src_lang": "en", "text": 5})"), 400);
  EXPECT_EQ(status(R"({"src_lang": "en", "text": ["a", 3]})"), 400);
  EXPECT_EQ(status(R"({"src_lang": 7, "text": "a"})"), 400);
  EXPECT_EQ(status(R"({"src_lang": "fr", "text": "the cat"})"), 400);
  EXPECT_EQ(status(R"({"text": "the cat"})"), 400);  // ambiguous language
  EXPECT_EQ(status("{\"src_lang\": \"en\", \"text\": \"a \xff b\"}"), 400);  // invalid UTF-8
  const auto err = body_of(server.handle_translate("{not json"));
  EXPECT_TRUE(err.contains("error"));
}

TEST(ServerHandlers, OversizedRequests) {
  const auto bundle = toy_bundle(4, {"en"});
  const TranslationServer server(bundle, small_options());
  std::vector<std::string> many(9, "the cat");
  EXPECT_EQ(server.handle_translate(json{{"text", many}}.dump()).status, 413);
  many.resize(8);
  EXPECT_EQ(server.handle_translate(json{{"text", many}}.dump()).status, 200);
  std::string long_line;
  for (int i = 0; i < 13; ++i) long_line += "cat ";
  EXPECT_EQ(server.handle_translate(json{{"text", long_line}}.dump()).status, 413);
}

class LiveServer : public ::testing::Test {
 protected:
  void start(const ModelBundle &bundle, ServerOptions opts) {
    server_ = std::make_unique<TranslationServer>(bundle, std::move(opts));
    port_ = server_->bind();
    thread_ = std::thread([this] { server_->serve(); });
    for (int i = 0; i < 200 && !server_->running(); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    ASSERT_TRUE(server_->running());
  }
  void TearDown() override {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }

  std::unique_ptr<TranslationServer> server_;
  std::thread thread_;
  int port_ = 0;
};

TEST_F(LiveServer, HealthAndTranslateOverHttp) {
  const auto bundle = toy_bundle(5, {"en"});
  start(bundle, small_options());
  auto c = client();
  auto health = c.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(json::parse(health->body).at("model_version"), bundle.model_version);
  auto res = c.Post("/translate", R"({"src_lang": "en", "text": ["the cat sat", "a dog"]})",
                    "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("translations").size(), 2u);
  auto bad = c.Post("/translate", "nope", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto missing = c.Get("/nothing");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
}

TEST_F(LiveServer, ConcurrentIdenticalRequestsAgree) {
  const auto bundle = toy_bundle(6, {"en"});
  auto opts = small_options();
  opts.threads = 16;
  start(bundle, opts);
  const std::string body = json{{"src_lang", "en"}, {"text", toy_source_lines()}}.dump();
  std::vector<std::future<std::string>> inflight;
  for (int i = 0; i < 16; ++i)
    inflight.push_back(std::async(std::launch::async, [&] {
      auto res = client().Post("/translate", body, "application/json");
      return res && res->status == 200 ? without_latency(res->body) : std::string("failed");
    }));
  std::vector<std::string> bodies;
  for (auto &f : inflight) bodies.push_back(f.get());
  for (const auto &b : bodies) EXPECT_EQ(b, bodies.front());
  EXPECT_NE(bodies.front(), "failed");
}

TEST_F(LiveServer, ThousandRequestsLeaveModelUntouched) {
  const auto bundle = toy_bundle(7, {"en"});
  const std::uint32_t before = parameter_hash(bundle.model);
  auto opts = small_options();
  opts.decode = {1, 0.6, 4};
  start(bundle, opts);
  const auto lines = toy_source_lines();
  std::vector<std::future<int>> workers;
  for (int w = 0; w < 8; ++w)
    workers.push_back(std::async(std::launch::async, [&, w] {
      auto c = client();
      int ok = 0;
      for (int i = 0; i < 125; ++i) {
        auto res = c.Post("/translate",
                          json{{"text", lines[static_cast<std::size_t>(w + i) % lines.size()]}}.dump(),
                          "application/json");
        ok += res && res->status == 200;
      }
      return ok;
    }));
  int ok = 0;
  for (auto &w : workers) ok += w.get();
  EXPECT_EQ(ok, 1000);
  EXPECT_EQ(parameter_hash(bundle.model), before);
}

TEST_F(LiveServer, StopEndsServing) {
  const auto bundle = toy_bundle(8);
  start(bundle, small_options());
  server_->stop();
  thread_.join();
  EXPECT_FALSE(server_->running());
  auto res = client().Get("/health");
  EXPECT_FALSE(res);
}

TEST(Server, BindFailureIsIoError) {
  const auto bundle = toy_bundle(9);
  auto opts = small_options();
  opts.host = "203.0.113.255";  // not a local address
  opts.port = 1;
  TranslationServer server(bundle, opts);
  EXPECT_THROW(server.bind(), IoError);
}

}  // namespace
}  // namespace nmt
