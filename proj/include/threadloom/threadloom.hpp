#pragma once

#include "threadloom/api_service.hpp"
#include "threadloom/citation_grammar.hpp"
#include "threadloom/discovery.hpp"
#include "threadloom/doc_model.hpp"
#include "threadloom/embedding.hpp"
#include "threadloom/engine.hpp"
#include "threadloom/errors.hpp"
#include "threadloom/highlight_linker.hpp"
#include "threadloom/metadata_client.hpp"
#include "threadloom/metadata_http.hpp"
#include "threadloom/tei_import.hpp"
#include "threadloom/thread_store.hpp"
#include "threadloom/thread_suggest.hpp"
