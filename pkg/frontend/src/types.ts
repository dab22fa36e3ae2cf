export interface ModelMeta {
  T_max: number;
  pe_variant: string;
  head_kind: string;
  model_width: number;
  encoder_channels: number;
  checkpoint_digest: string;
  max_pixels: number;
}

export interface InferenceRequest {
  image: string; // base64 PNG
  s_x: number;
  s_y: number;
  T: number;
  progressive?: boolean;
  session_id?: string;
  reference?: string;
}

export interface FrameEvent {
  t: number;
  image: string; // base64 PNG
  elapsed_ms: number;
  psnr?: number | null;
}

export interface DoneEvent {
  frames: number;
  T: number;
  elapsed_ms: number;
}

export interface InferResponse {
  image: string;
  width: number;
  height: number;
  T: number;
  elapsed_ms: number;
  model: ModelMeta;
}
