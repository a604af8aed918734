// Wire types for the /v1 API. Field names mirror the JSON exactly; the UI
// never derives scores or rankings itself, it only renders these payloads.

export interface RecommendationRow {
  item_id: string;
  item_index: number;
  rank: number;
  score: number;
  keyphrase_ids: number[];
  previous_rank?: number;
}

export interface ExplanationRow {
  keyphrase_id: number;
  name: string;
  score: number;
}

export interface SessionResponse {
  session_id: string;
  turn: number;
  remaining_turns: number;
  blender: string;
  user_id: string | null;
  critiques: number[];
  recommendations: RecommendationRow[];
  explanation: ExplanationRow[];
}

export interface CatalogItem {
  item_id: string;
  item_index: number;
  keyphrase_ids: number[];
}

export interface CatalogKeyphrase {
  keyphrase_id: number;
  name: string;
}

export interface Catalog {
  items: CatalogItem[];
  keyphrases: CatalogKeyphrase[];
  n_users: number;
  default_top_n: number;
  max_turns: number;
}

export interface CreateSessionBody {
  user_id?: string;
  keyphrases?: number[];
  top_n?: number;
}
