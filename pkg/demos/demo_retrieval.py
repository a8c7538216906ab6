"""Build a small corpus index and retrieve support passages.

Walks the full first-stage pipeline: chunk documents into 100-word pieces,
build the inverted index, score with BM25, then rerank with the offline
lexical-overlap reranker.

Run:  python3 demos/demo_retrieval.py
"""

from treewise import (
    LexicalOverlapReranker,
    build_index,
    bm25_score,
    chunk_document,
    hypothesis_query,
    rerank,
    retrieve,
    tokenize,
)
from treewise.core import Question, Statement

DOCUMENTS = {
    "tides": "The gravitational pull of the Moon causes the ocean to bulge toward it. "
    "As the Earth rotates beneath the bulge, coastal water levels rise and fall twice a day. "
    "The Sun contributes a smaller, secondary pull.",
    "moon": "The Moon is Earth's only natural satellite. It orbits the Earth about once every "
    "27 days and always shows the same face to observers on the ground.",
    "volcano": "Volcanoes erupt when magma rises through fractures in the crust. "
    "Eruptions can eject ash, gases, and lava over wide areas.",
}

# 1. chunk each document (100 words per chunk; these are shorter, so one each)
chunks = []
for doc_id, text in DOCUMENTS.items():
    chunks.extend(chunk_document(doc_id, doc_id, text))
print(f"chunked {len(DOCUMENTS)} documents into {len(chunks)} chunks")

# 2. build the inverted index
index = build_index(chunks)
print(f"index: {index.n_chunks} chunks, {len(index.postings)} terms, avgdl {index.avgdl:.1f}")

# 3. first-stage BM25 retrieval with the question + hypothesis as query
question = Question(id="demo", text="Why do ocean tides happen?")
hypothesis = Statement("The Moon causes the ocean tides.")
query = hypothesis_query(question, hypothesis)
print(f"\nquery: {query!r}")

ranked = retrieve(index, query, k=10)
for chunk_id, score in ranked:
    print(f"  bm25 {score:6.3f}  {chunk_id}")

# the score of any chunk is reproducible term by term
top_id = ranked[0][0]
assert bm25_score(index, tokenize(query), top_id) == ranked[0][1]

# 4. rerank the candidates and keep the best
candidates = [index.chunks[cid] for cid, _ in ranked]
reranked = rerank(query, candidates, LexicalOverlapReranker(), keep=2)
print("\nafter reranking (top 2):")
for chunk, score in reranked:
    print(f"  overlap {score:5.3f}  {chunk.chunk_id}: {chunk.text[:60]}...")
